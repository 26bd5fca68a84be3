//! Randomized falsification runs for each matrix inequality.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::random::{random_gaussian, random_psd, random_simplex, random_spd, random_topology};
use super::{
    check_convex_combination_order, check_determinant_order, check_information_order, check_ky_fan,
    cr_inequality, scale_of, sym_eigen, woodbury_check, ToolkitError,
};
use crate::graph::NetworkTopology;

/// Weight matrices whose smallest absolute eigenvalue falls below this are reported
/// separately for the covariance ordering, which only follows from the information
/// ordering when the weights are invertible.
const SINGULAR_WEIGHTS_EIG: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LemmaKind {
    /// `𝒜 Q 𝒜 ⪯ Q'` for PSD blocks.
    ConvexCombination,
    /// `𝒜 P̄^{-1} 𝒜 ⪯ P^{-1}` and `𝒜 P 𝒜 ⪯ P̄`.
    InformationOrder,
    /// `|P̄^{-1}| ≤ |P^{-1}|` across the combine step.
    DeterminantOrder,
    /// Log-determinant concavity.
    KyFan,
    /// Matrix inversion lemma.
    Woodbury,
    /// Power-sum inequality.
    CrInequality,
}

impl LemmaKind {
    pub const ALL: [LemmaKind; 6] = [
        LemmaKind::ConvexCombination,
        LemmaKind::InformationOrder,
        LemmaKind::DeterminantOrder,
        LemmaKind::KyFan,
        LemmaKind::Woodbury,
        LemmaKind::CrInequality,
    ];

    pub fn id(self) -> &'static str {
        match self {
            LemmaKind::ConvexCombination => "convex-combination",
            LemmaKind::InformationOrder => "information-order",
            LemmaKind::DeterminantOrder => "determinant-order",
            LemmaKind::KyFan => "ky-fan",
            LemmaKind::Woodbury => "woodbury",
            LemmaKind::CrInequality => "cr-inequality",
        }
    }

    fn stream(self) -> u64 {
        Self::ALL.iter().position(|&k| k == self).unwrap_or(0) as u64
    }
}

impl fmt::Display for LemmaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for LemmaKind {
    type Err = ToolkitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.id() == s)
            .ok_or_else(|| ToolkitError::InvalidArgument(format!("unknown lemma id {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub draws: usize,
    pub dims: Vec<usize>,
    pub nodes: Vec<usize>,
    pub seed: u64,
    /// Relative PSD tolerance for the ordering checks.
    pub tol: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            draws: 1000,
            dims: vec![1, 2, 3],
            nodes: vec![2, 3, 5],
            seed: 0,
            tol: 1e-9,
        }
    }
}

/// Outcome of a randomized suite.
///
/// `worst` is the smallest relative eigenvalue margin for ordering checks, the smallest
/// log-domain margin for determinant checks, the largest relative residual for the
/// inversion lemma and the smallest relative margin for the power-sum inequality.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub lemma: LemmaKind,
    pub draws: usize,
    pub violations: usize,
    pub worst: f64,
    /// Draws with (near) singular weights, excluded from the covariance ordering verdict.
    pub singular_weight_draws: usize,
    /// Worst relative covariance-ordering margin observed on those draws.
    pub singular_worst: Option<f64>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn near_singular(t: &NetworkTopology) -> bool {
    sym_eigen(t.weights())
        .eigenvalues
        .iter()
        .any(|e| e.abs() < SINGULAR_WEIGHTS_EIG)
}

pub fn run_lemma_suite(lemma: LemmaKind, cfg: &SuiteConfig) -> Result<SuiteReport, ToolkitError> {
    if cfg.dims.is_empty() || cfg.nodes.is_empty() || cfg.dims.contains(&0) || cfg.nodes.contains(&0) {
        return Err(ToolkitError::InvalidArgument("dims and nodes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(lemma.stream());

    let minimize = lemma != LemmaKind::Woodbury;
    let mut report = SuiteReport {
        lemma,
        draws: cfg.draws,
        violations: 0,
        worst: if minimize { f64::INFINITY } else { 0.0 },
        singular_weight_draws: 0,
        singular_worst: None,
    };
    let record = |report: &mut SuiteReport, holds: bool, value: f64| {
        if !holds {
            report.violations += 1;
        }
        report.worst = if minimize { report.worst.min(value) } else { report.worst.max(value) };
    };

    for draw in 0..cfg.draws {
        let m = cfg.dims[draw % cfg.dims.len()];
        let n = cfg.nodes[(draw / cfg.dims.len()) % cfg.nodes.len()];
        match lemma {
            LemmaKind::ConvexCombination => {
                let t = random_topology(n, &mut rng);
                let qs: Vec<_> = (0..n).map(|_| random_psd(m, &mut rng)).collect();
                let r = check_convex_combination_order(&t, &qs, cfg.tol)?;
                let scale = qs.iter().map(scale_of).fold(1.0, f64::max);
                record(&mut report, r.holds, r.worst_eig / scale);
            }
            LemmaKind::InformationOrder => {
                let t = random_topology(n, &mut rng);
                let blocks: Vec<_> = (0..n).map(|_| random_spd(m, &mut rng)).collect();
                let (first, second) = check_information_order(&t, &blocks, cfg.tol)?;
                let scale = blocks.iter().map(scale_of).fold(1.0, f64::max);
                record(&mut report, first.holds, first.worst_eig / scale);
                let p_scale = blocks
                    .iter()
                    .map(|b| super::inverse_spd(b).map(|x| scale_of(&x)))
                    .collect::<Result<Vec<_>, _>>()?
                    .into_iter()
                    .fold(1.0, f64::max);
                let second_rel = second.worst_eig / p_scale;
                if near_singular(&t) {
                    report.singular_weight_draws += 1;
                    report.singular_worst =
                        Some(report.singular_worst.map_or(second_rel, |w: f64| w.min(second_rel)));
                } else {
                    record(&mut report, second.holds, second_rel);
                }
            }
            LemmaKind::DeterminantOrder => {
                let t = random_topology(n, &mut rng);
                let blocks: Vec<_> = (0..n).map(|_| random_spd(m, &mut rng)).collect();
                let r = check_determinant_order(&t, &blocks)?;
                record(&mut report, r.holds, r.margin);
            }
            LemmaKind::KyFan => {
                let k = rng.random_range(2..=4);
                let lambdas = random_simplex(k, &mut rng);
                let mats: Vec<_> = (0..k)
                    .map(|_| {
                        if rng.random::<bool>() {
                            random_spd(m, &mut rng)
                        } else {
                            random_psd(m, &mut rng)
                        }
                    })
                    .collect();
                let r = check_ky_fan(&lambdas, &mats)?;
                record(&mut report, r.holds, r.margin);
            }
            LemmaKind::Woodbury => {
                let p = m + 1;
                let q = rng.random_range(1..=p);
                let a = random_spd(p, &mut rng);
                let b = random_gaussian(p, q, &mut rng) / (p as f64).sqrt();
                let d = random_spd(q, &mut rng);
                let r = woodbury_check(&a, &b, &b.transpose(), &d)?;
                record(&mut report, r.holds, r.residual);
            }
            LemmaKind::CrInequality => {
                let r = [0.5, 1.0, 2.0][draw % 3];
                let len = m + n;
                let values: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..10.0)).collect();
                let out = cr_inequality(&values, r)?;
                record(&mut report, out.holds, out.margin);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for k in LemmaKind::ALL {
            assert_eq!(k.id().parse::<LemmaKind>().unwrap(), k);
        }
        assert!("4.1".parse::<LemmaKind>().is_err());
    }

    #[test]
    fn small_suites_pass() {
        let cfg = SuiteConfig {
            draws: 60,
            ..SuiteConfig::default()
        };
        for k in LemmaKind::ALL {
            let r = run_lemma_suite(k, &cfg).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn suite_is_seed_deterministic() {
        let cfg = SuiteConfig {
            draws: 30,
            seed: 11,
            ..SuiteConfig::default()
        };
        let a = run_lemma_suite(LemmaKind::ConvexCombination, &cfg).unwrap();
        let b = run_lemma_suite(LemmaKind::ConvexCombination, &cfg).unwrap();
        assert_eq!(a.worst.to_bits(), b.worst.to_bits());
    }
}
