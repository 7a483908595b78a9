//! Random mini-C programs for the property suites.

use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct GenOpts {
    /// Including main.
    pub max_threads: usize,
    pub max_locks: usize,
    /// Critical sections per thread body.
    pub max_sections: usize,
    pub wrappers: f64,
    pub heap_locks: f64,
    pub create_in_loop: f64,
    /// Lock through a pointer local that may point to one of two mutexes.
    pub aliased: f64,
    pub conditional_join: f64,
}

impl Default for GenOpts {
    fn default() -> Self {
        GenOpts {
            max_threads: 3,
            max_locks: 4,
            max_sections: 2,
            wrappers: 0.3,
            heap_locks: 0.2,
            create_in_loop: 0.15,
            aliased: 0.2,
            conditional_join: 0.2,
        }
    }
}

struct Gen {
    rng: ChaCha8Rng,
    opts: GenOpts,
    locks: usize,
    heap: bool,
    wrappers: bool,
    out: String,
}

#[derive(Clone)]
enum Target {
    Global(usize),
    Heap,
    Alias,
}

impl Gen {
    fn chance(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p.clamp(0.0, 1.0))
    }

    fn line(&mut self, indent: usize, s: &str) {
        let _ = writeln!(self.out, "{}{}", "  ".repeat(indent), s);
    }

    fn target_expr(t: &Target) -> String {
        match t {
            Target::Global(i) => format!("&m{i}"),
            Target::Heap => "h".into(),
            Target::Alias => "p".into(),
        }
    }

    fn pick_target(&mut self, alias: bool, avoid: &[usize]) -> Target {
        let r: f64 = self.rng.gen();
        if self.heap && r < 0.15 {
            return Target::Heap;
        }
        if alias && r < 0.35 {
            return Target::Alias;
        }
        let free: Vec<usize> = (0..self.locks).filter(|i| !avoid.contains(i)).collect();
        Target::Global(*free.choose(&mut self.rng).unwrap_or(&0))
    }

    fn acquire(&mut self, indent: usize, t: &Target) {
        let e = Self::target_expr(t);
        if self.wrappers && self.chance(0.5) {
            self.line(indent, &format!("acquire({e});"));
        } else {
            self.line(indent, &format!("lock({e});"));
        }
    }

    fn release(&mut self, indent: usize, t: &Target) {
        let e = Self::target_expr(t);
        if self.wrappers && self.chance(0.5) {
            self.line(indent, &format!("release({e});"));
        } else {
            self.line(indent, &format!("unlock({e});"));
        }
    }

    fn data(&mut self, indent: usize) {
        let g = self.rng.gen_range(0..2);
        match self.rng.gen_range(0..3) {
            0 => self.line(indent, &format!("g{g} = g{g} + 1;")),
            1 => {
                let v = self.rng.gen_range(0..2);
                self.line(indent, &format!("g{g} = {v};"))
            }
            _ => {
                let h = 1 - g;
                self.line(indent, &format!("if (g{g} == 1) {{"));
                self.line(indent + 1, &format!("g{h} = 0;"));
                self.line(indent, "}");
            }
        }
    }

    /// One critical section, nested up to two deep.
    fn section(&mut self, indent: usize, alias: bool) {
        let outer = self.pick_target(alias, &[]);
        let avoid: Vec<usize> = match outer {
            Target::Global(i) => vec![i],
            _ => vec![],
        };
        self.acquire(indent, &outer);
        if self.chance(0.7) {
            let inner_alias = alias && !matches!(outer, Target::Alias);
            let mut inner = self.pick_target(inner_alias, &avoid);
            if matches!((&outer, &inner), (Target::Heap, Target::Heap)) {
                inner = Target::Global(self.rng.gen_range(0..self.locks));
            }
            self.acquire(indent, &inner);
            self.data(indent);
            self.release(indent, &inner);
        } else {
            self.data(indent);
        }
        self.release(indent, &outer);
    }

    fn sections(&mut self, indent: usize, alias: bool) {
        let n = self.rng.gen_range(1..=self.opts.max_sections.max(1));
        for _ in 0..n {
            if self.chance(0.2) {
                self.line(indent, "i = 0;");
                self.line(indent, "while (i < 2) {");
                self.section(indent + 1, alias);
                self.line(indent + 1, "i = i + 1;");
                self.line(indent, "}");
            } else {
                self.section(indent, alias);
            }
            if self.chance(0.3) {
                self.data(indent);
            }
        }
    }

    fn alias_setup(&mut self, indent: usize) -> bool {
        if self.locks < 2 || !self.chance(self.opts.aliased) {
            return false;
        }
        let a = self.rng.gen_range(0..self.locks);
        let b = (a + 1 + self.rng.gen_range(0..self.locks - 1)) % self.locks;
        self.line(indent, "mutex* p;");
        self.line(indent, &format!("p = &m{a};"));
        self.line(indent, "if (g0 == 1) {");
        self.line(indent + 1, &format!("p = &m{b};"));
        self.line(indent, "}");
        true
    }

    fn join(&mut self, indent: usize, t: usize) {
        if self.chance(self.opts.conditional_join) {
            self.line(indent, "if (g1 == 0) {");
            self.line(indent + 1, &format!("join(t{t});"));
            self.line(indent, "}");
        } else {
            self.line(indent, &format!("join(t{t});"));
        }
    }

    fn worker(&mut self, k: usize, child: Option<usize>) {
        self.line(0, &format!("void w{k}() {{"));
        self.line(1, "int i;");
        let alias = self.alias_setup(1);
        if let Some(c) = child {
            self.line(1, &format!("create(&t{c}, w{c}, 0);"));
        }
        self.sections(1, alias);
        if let Some(c) = child {
            if self.chance(0.7) {
                self.join(1, c);
            }
        }
        self.line(0, "}");
        self.line(0, "");
    }

    fn program(mut self) -> String {
        let o = &self.opts;
        self.locks = self.rng.gen_range(2..=o.max_locks.max(2));
        self.heap = self.chance(self.opts.heap_locks);
        self.wrappers = self.chance(self.opts.wrappers);
        let workers = self.rng.gen_range(1..self.opts.max_threads.max(2));
        let in_loop = workers == 1 && self.opts.max_threads >= 3 && self.chance(self.opts.create_in_loop);
        let nested = workers == 2 && self.chance(0.3);

        for i in 0..self.locks {
            self.line(0, &format!("mutex m{i};"));
        }
        self.line(0, "int g0;");
        self.line(0, "int g1;");
        for t in 0..workers {
            self.line(0, &format!("tid t{t};"));
        }
        if self.heap {
            self.line(0, "mutex* h;");
        }
        self.line(0, "");
        if self.wrappers {
            self.line(0, "void acquire(mutex* l) {");
            self.line(1, "lock(l);");
            self.line(0, "}");
            self.line(0, "");
            self.line(0, "void release(mutex* l) {");
            self.line(1, "unlock(l);");
            self.line(0, "}");
            self.line(0, "");
        }
        if nested {
            self.worker(1, None);
            self.worker(0, Some(1));
        } else {
            for k in (0..workers).rev() {
                self.worker(k, None);
            }
        }

        self.line(0, "int main() {");
        self.line(1, "int i;");
        if self.heap {
            self.line(1, "h = malloc(mutex);");
        }
        let alias = self.alias_setup(1);
        let direct: Vec<usize> = if nested { vec![0] } else { (0..workers).collect() };
        if in_loop {
            self.line(1, "i = 0;");
            self.line(1, "while (i < 2) {");
            self.line(2, "create(&t0, w0, 0);");
            self.line(2, "i = i + 1;");
            self.line(1, "}");
        } else {
            for &t in &direct {
                self.line(1, &format!("create(&t{t}, w{t}, 0);"));
            }
        }
        self.sections(1, alias);
        for &t in &direct {
            if self.chance(0.6) {
                self.join(1, t);
                if self.chance(0.5) {
                    self.section(1, alias);
                }
            }
        }
        self.line(1, "return 0;");
        self.line(0, "}");
        self.out
    }
}

/// Source text of a random program; identical for identical inputs.
pub fn generate(seed: u64, opts: &GenOpts) -> String {
    let g = Gen { rng: ChaCha8Rng::seed_from_u64(seed), opts: opts.clone(), locks: 0, heap: false, wrappers: false, out: String::new() };
    g.program()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;

    #[test]
    fn seed_zero_type_checks() {
        let src = generate(0, &GenOpts::default());
        Model::load(&src).unwrap();
    }

    #[test]
    fn deterministic() {
        let o = GenOpts::default();
        assert_eq!(generate(7, &o), generate(7, &o));
        assert_ne!(generate(7, &o), generate(8, &o));
    }

    #[test]
    fn many_seeds_load() {
        for s in 0..300 {
            let src = generate(s, &GenOpts::default());
            if let Err(e) = Model::load(&src) {
                panic!("seed {s}: {e}\n{src}");
            }
        }
    }

    #[test]
    fn knobs_show_up() {
        let all = GenOpts { wrappers: 1.0, heap_locks: 1.0, aliased: 1.0, ..GenOpts::default() };
        let src = generate(3, &all);
        assert!(src.contains("acquire("));
        assert!(src.contains("malloc(mutex)"));
        assert!(src.contains("mutex* p;"));
        let none = GenOpts { wrappers: 0.0, heap_locks: 0.0, aliased: 0.0, create_in_loop: 0.0, conditional_join: 0.0, ..GenOpts::default() };
        let src = generate(3, &none);
        assert!(!src.contains("acquire(") && !src.contains("malloc") && !src.contains("mutex* p"));
    }
}
