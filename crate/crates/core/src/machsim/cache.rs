/// Set-associative cache with LRU replacement. Tracks line numbers only
/// (address / line size); data lives in the interpreter's memory.
#[derive(Debug, Clone)]
pub struct Cache {
    sets: Vec<Vec<(u64, u64)>>,
    ways: usize,
    line_bytes: u64,
    clock: u64,
}

impl Cache {
    pub fn new(capacity: u64, line_bytes: u64, ways: u64) -> Self {
        let nsets = (capacity / (line_bytes * ways)).max(1) as usize;
        Cache { sets: vec![Vec::with_capacity(ways as usize); nsets], ways: ways as usize, line_bytes, clock: 0 }
    }

    pub fn from_config(l1: &super::L1Config) -> Self {
        Cache::new(l1.capacity, l1.line, l1.ways)
    }

    pub fn line_of(&self, addr: u64) -> u64 {
        addr / self.line_bytes
    }

    fn set_of(&self, line: u64) -> usize {
        (line % self.sets.len() as u64) as usize
    }

    pub fn contains(&self, line: u64) -> bool {
        self.sets[self.set_of(line)].iter().any(|&(l, _)| l == line)
    }

    /// Marks `line` most recently used if present.
    pub fn touch(&mut self, line: u64) -> bool {
        self.clock += 1;
        let clock = self.clock;
        let s = self.set_of(line);
        match self.sets[s].iter_mut().find(|(l, _)| *l == line) {
            Some(entry) => {
                entry.1 = clock;
                true
            }
            None => false,
        }
    }

    /// Installs `line` as most recently used, returning the evicted line.
    pub fn insert(&mut self, line: u64) -> Option<u64> {
        if self.touch(line) {
            return None;
        }
        let clock = self.clock;
        let ways = self.ways;
        let s = self.set_of(line);
        let set = &mut self.sets[s];
        if set.len() < ways {
            set.push((line, clock));
            return None;
        }
        let victim = set.iter().enumerate().min_by_key(|(_, &(_, t))| t).map(|(k, _)| k).unwrap();
        let old = set[victim].0;
        set[victim] = (line, clock);
        Some(old)
    }

    /// Demand access: returns whether it hit; a miss installs the line.
    pub fn access(&mut self, line: u64) -> bool {
        if self.touch(line) {
            true
        } else {
            self.insert(line);
            false
        }
    }

    pub fn resident_lines(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }
}
