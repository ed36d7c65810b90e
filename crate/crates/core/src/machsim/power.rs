use super::MachineConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PowerError {
    #[error("frequency {0} GHz outside [f_min, f_max]")]
    Frequency(f64),
    #[error("ipc {0} outside [0, ipc_max]")]
    Ipc(f64),
}

/// Power draw in normalised watts at frequency `f` (GHz) and activity `ipc`.
pub fn power(f: f64, ipc: f64, m: &MachineConfig) -> Result<f64, PowerError> {
    let eps = 1e-9;
    if !(f >= m.f_min - eps && f <= m.f_max + eps) {
        return Err(PowerError::Frequency(f));
    }
    if !(ipc >= 0.0 && ipc <= m.ipc_max + eps) {
        return Err(PowerError::Ipc(ipc));
    }
    Ok(power_unchecked(f, ipc, m))
}

pub(crate) fn power_unchecked(f: f64, ipc: f64, m: &MachineConfig) -> f64 {
    let p = &m.power;
    let span = m.f_max - m.f_min;
    let frac = if span > 0.0 { (f - m.f_min) / span } else { 1.0 };
    let v = p.v_of_f.v_min_ratio + (1.0 - p.v_of_f.v_min_ratio) * frac;
    let activity = p.alpha + p.beta * (ipc / m.ipc_max).min(1.0);
    p.p_static + p.c_dyn * v * v * (f / m.f_max) * activity
}
