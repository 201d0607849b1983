//! Randomized audit of the pointwise algebraic inequalities used by the
//! integral Bernstein argument.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::hfun::{violation, HFunction, Profile, SLACK};

#[derive(Clone, Debug, Serialize)]
pub struct InequalityResult {
    pub name: &'static str,
    pub samples: usize,
    pub violations: usize,
    /// Largest relative violation `(rhs − lhs)/max(1,|lhs|,|rhs|)`, floored at 0.
    pub max_violation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalityReport {
    pub seed: u64,
    pub samples_per_check: usize,
    pub results: Vec<InequalityResult>,
    pub all_passed: bool,
}

struct Tally {
    name: &'static str,
    samples: usize,
    violations: usize,
    max: f64,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally {
            name,
            samples: 0,
            violations: 0,
            max: 0.0,
        }
    }

    /// Records the inequality `lhs ≥ rhs`.
    fn ge(&mut self, lhs: f64, rhs: f64) {
        let v = violation(lhs, rhs);
        self.samples += 1;
        self.max = self.max.max(v);
        if v > SLACK || v.is_nan() {
            self.violations += 1;
        }
    }

    fn finish(self) -> InequalityResult {
        InequalityResult {
            name: self.name,
            samples: self.samples,
            violations: self.violations,
            max_violation: self.max,
        }
    }
}

/// Log-uniform magnitude in `[1e-3, 1e3]` with a random sign.
fn scalar(rng: &mut ChaCha8Rng) -> f64 {
    let mag = 10f64.powf(rng.gen_range(-3.0..3.0));
    if rng.gen_bool(0.5) {
        mag
    } else {
        -mag
    }
}

fn sym_matrix(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
    let mut a = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let v = scale * rng.gen_range(-1.0..1.0);
            a[i][j] = v;
            a[j][i] = v;
        }
    }
    a
}

fn frob_sq(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().map(|v| v * v).sum()
}

fn trace(a: &[Vec<f64>]) -> f64 {
    (0..a.len()).map(|i| a[i][i]).sum()
}

/// Runs every check with `samples` random draws each.
pub fn pointwise_inequality_suite(seed: u64, samples: usize) -> InequalityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut schw = Tally::new("schw: |A|^2 >= (tr A)^2/d");
    let mut ab = Tally::new("ab: (a+b-c)^2 >= a^2 - 2a(|b|+|c|), a >= 0");
    let mut abp = Tally::new("ab': (a-b)^2 >= a^2/2 - 2b^2");
    let mut cs1a = Tally::new("cs1: |D2u|^2 >= (lap u)^2/d");
    let mut cs1b = Tally::new("cs1: (lap u)^2/d >= |grad u|^(2g)/(2g^2 d) - 2f^2/d");
    let mut h1 = Tally::new("h1: h'(t) t^(1/2) <= (1+t)^(delta/2)");
    let mut h2 = Tally::new("h2: h'(t) + 2t h''(t) >= delta h'(t)");
    let mut h3 = Tally::new("h3: h'(w) = ((delta+1) z/2)^((delta-1)/(1+delta))");
    let mut hneg = Tally::new("h'' < 0");
    let mut chain = Tally::new("h''<0 chain: z1|A|^2 + z2|A grad u|^2 >= delta z1 |A|^2");

    for _ in 0..samples {
        // Schwarz
        let d = rng.gen_range(2..=5);
        let a = sym_matrix(&mut rng, d);
        schw.ge(frob_sq(&a), trace(&a).powi(2) / d as f64);

        // (ab), (ab')
        let (x, y, z) = (scalar(&mut rng).abs(), scalar(&mut rng), scalar(&mut rng));
        ab.ge((x + y - z).powi(2), x * x - 2.0 * x * (y.abs() + z.abs()));
        let (x, y) = (scalar(&mut rng), scalar(&mut rng));
        abp.ge((x - y).powi(2), x * x / 2.0 - 2.0 * y * y);

        // (cs1) with Δu replaced by the equation: Δu = |∇u|^γ/γ − f
        let gamma = rng.gen_range(1.01..6.0);
        let grad_norm = 10f64.powf(rng.gen_range(-2.0..1.0));
        let f = scalar(&mut rng);
        let lap = grad_norm.powf(gamma) / gamma - f;
        let mut hm = sym_matrix(&mut rng, d);
        let shift = (lap - trace(&hm)) / d as f64;
        for i in 0..d {
            hm[i][i] += shift;
        }
        let df = d as f64;
        cs1a.ge(frob_sq(&hm), trace(&hm).powi(2) / df);
        cs1b.ge(lap * lap / df, grad_norm.powf(2.0 * gamma) / (2.0 * gamma * gamma * df) - 2.0 / df * f * f);

        // profile
        let delta = rng.gen_range(1e-3..(1.0 - 1e-3));
        let hf = HFunction::new(delta).expect("delta in range");
        let t = if rng.gen_bool(0.01) { 0.0 } else { 10f64.powf(rng.gen_range(-8.0..6.0)) };
        h1.ge((1.0 + t).powf(delta / 2.0), hf.dh(t) * t.sqrt());
        h2.ge(hf.dh(t) + 2.0 * t * hf.ddh(t), delta * hf.dh(t));
        let lhs = hf.dh(t);
        let rhs = ((delta + 1.0) / 2.0 * hf.h(t)).powf((delta - 1.0) / (1.0 + delta));
        h3.ge(lhs, rhs);
        h3.ge(rhs, lhs);
        hneg.ge(0.0, hf.ddh(t) + f64::MIN_POSITIVE);

        // matrix form of the h'' < 0 chain
        let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0) * 10f64.powf(rng.gen_range(-2.0..2.0))).collect();
        let w = 0.5 * p.iter().map(|v| v * v).sum::<f64>();
        let ap: f64 = (0..d)
            .map(|i| (0..d).map(|j| a[i][j] * p[j]).sum::<f64>().powi(2))
            .sum();
        let aa = frob_sq(&a);
        let lhs = hf.dh(w) * aa + hf.ddh(w) * ap;
        chain.ge(lhs, (hf.dh(w) + 2.0 * w * hf.ddh(w)) * aa);
        chain.ge((hf.dh(w) + 2.0 * w * hf.ddh(w)) * aa, delta * hf.dh(w) * aa);
    }

    let results: Vec<InequalityResult> = [schw, ab, abp, cs1a, cs1b, h1, h2, h3, hneg, chain]
        .into_iter()
        .map(Tally::finish)
        .collect();
    let all_passed = results.iter().all(|r| r.violations == 0);
    InequalityReport {
        seed,
        samples_per_check: samples,
        results,
        all_passed,
    }
}

/// Equality cases that must come out exactly tight.
pub fn equality_cases() -> Vec<(&'static str, f64, f64)> {
    let id3 = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    vec![
        ("schw, identity, d=3", frob_sq(&id3), trace(&id3).powi(2) / 3.0),
        ("ab, a=1 b=0 c=0", 1.0, 1.0 - 2.0 * (0.0 + 0.0)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_has_no_violations() {
        let rep = pointwise_inequality_suite(7, 20_000);
        for r in &rep.results {
            assert_eq!(r.violations, 0, "{}: {}", r.name, r.max_violation);
            assert_eq!(r.samples % 20_000, 0);
        }
        assert!(rep.all_passed);
    }

    #[test]
    fn equality_cases_are_tight() {
        for (name, lhs, rhs) in equality_cases() {
            assert_eq!(lhs, rhs, "{name}");
        }
    }

    #[test]
    fn suite_is_deterministic() {
        let a = serde_json::to_string(&pointwise_inequality_suite(3, 1000)).unwrap();
        let b = serde_json::to_string(&pointwise_inequality_suite(3, 1000)).unwrap();
        assert_eq!(a, b);
    }
}
