//! DIR: a small register-based SSA intermediate representation with a
//! line-oriented text format, a validator, and a reference interpreter.

mod interp;
mod parse;
mod print;
mod types;
mod validate;

pub use interp::{
    interpret, interpret_seeded, mix_seed, prng_bytes, ExecError, ExecTrace, Lowered, Memory, DEFAULT_FUEL,
};
pub(crate) use interp::{Exit, Frame, NullObserver, Observer};
pub use parse::{parse_program, ParseError};
pub use print::{print_function, print_instruction, print_program};
pub use types::*;
pub use validate::{validate_function, validate_program, Diagnostic};
