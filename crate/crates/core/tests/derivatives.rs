//! Analytic derivatives against central differences.

mod common;

use common::{case, fd_check, formulation_families, random_point};
use gridweld::ecf::{Formulation, FormulationOptions, Norm, SourceKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const REL_TOL: f64 = 1e-5;

#[test]
fn every_family_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for name in ["micro_td_stressed", "micro_td_peak"] {
        let c = case(name);
        let fams = formulation_families(&c, &mut rng);
        for (label, f) in &fams {
            for _ in 0..3 {
                let (x, l, m) = random_point(f, &mut rng, 0.05);
                let e = fd_check(f, &x, &l, &m);
                assert!(e.max() < REL_TOL, "{name} {label}: {e:?}");
            }
        }
    }
}

#[test]
fn single_phase_laterals_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let c = case("td_2feeder_stressed");
    for source in [SourceKind::Current, SourceKind::Power, SourceKind::Admittance] {
        let f = Formulation::centralized(&c, FormulationOptions { norm: Norm::L1, source, q_only: false });
        let (x, l, m) = random_point(&f, &mut rng, 0.05);
        let e = fd_check(&f, &x, &l, &m);
        assert!(e.max() < REL_TOL, "{source}: {e:?}");
    }
}

struct SkewedHessian(common::mismatch::ForcedMismatch);

impl gridweld::pdip::Nlp for SkewedHessian {
    fn num_vars(&self) -> usize {
        2
    }
    fn num_eq(&self) -> usize {
        1
    }
    fn num_ineq(&self) -> usize {
        2
    }
    fn initial_point(&self) -> Vec<f64> {
        self.0.initial_point()
    }
    fn evaluate(&self, x: &[f64]) -> Result<gridweld::pdip::Evaluation, gridweld::pdip::NlpError> {
        self.0.evaluate(x)
    }
    fn hessian(&self, x: &[f64], l: &[f64], m: &[f64]) -> Result<gridweld::pdip::Triplets, gridweld::pdip::NlpError> {
        let mut h = self.0.hessian(x, l, m)?;
        h.vals[0] *= 1.01;
        Ok(h)
    }
}

#[test]
fn checker_flags_a_wrong_hessian() {
    let p = common::mismatch::ForcedMismatch { r: 0.1, p: 3.0, v_min: 0.5, v_max: 1.1 };
    let (x, l, m) = (vec![0.8, 0.3], vec![0.7], vec![0.1, 0.2]);
    assert!(fd_check(&p, &x, &l, &m).max() < REL_TOL);
    assert!(fd_check(&SkewedHessian(p), &x, &l, &m).hessian > 1e-3);
}
