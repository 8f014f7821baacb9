//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::linalg::Matrix;

/// A model (or a gradient shaped like one) viewed as named flat groups.
pub trait Parameters {
    fn groups(&self) -> Vec<(&'static str, &[f64])>;
    fn groups_mut(&mut self) -> Vec<(&'static str, &mut [f64])>;

    fn parameter_count(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.groups()
            .iter()
            .all(|(_, g)| g.iter().all(|x| x.is_finite()))
    }
}

impl Parameters for Vec<f64> {
    fn groups(&self) -> Vec<(&'static str, &[f64])> {
        vec![("theta", self.as_slice())]
    }

    fn groups_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![("theta", self.as_mut_slice())]
    }
}

impl Parameters for Matrix {
    fn groups(&self) -> Vec<(&'static str, &[f64])> {
        vec![("matrix", self.as_slice())]
    }

    fn groups_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![("matrix", self.as_mut_slice())]
    }
}

/// Adds `scale · delta` to every parameter, group by group.
pub fn apply_update<P: Parameters, G: Parameters>(params: &mut P, delta: &G, scale: f64) {
    for ((_, p), (_, g)) in params.groups_mut().into_iter().zip(delta.groups()) {
        crate::linalg::axpy(scale, g, p);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FdOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates checked per group; `None` checks all of them.
    pub max_coords_per_group: Option<usize>,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-3,
            max_coords_per_group: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_relative_error: f64,
    pub worst_index: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() < self.tolerance
    }

    pub fn checked(&self) -> usize {
        self.groups.iter().map(|g| g.checked).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against `(loss(θ+h) − loss(θ−h)) / 2h` on sampled
/// coordinates. `skip(group, index)` excludes coordinates (e.g. next to a
/// non-differentiable kink). `params` is restored before returning.
pub fn finite_difference_check<P, G, L, S>(
    params: &mut P,
    analytic: &G,
    mut loss: L,
    skip: S,
    options: &FdOptions,
) -> GradCheckReport
where
    P: Parameters,
    G: Parameters,
    L: FnMut(&P) -> f64,
    S: Fn(usize, usize) -> bool,
{
    assert!(options.step > 0.0, "finite-difference step must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let analytic_groups: Vec<(&'static str, Vec<f64>)> = analytic
        .groups()
        .into_iter()
        .map(|(n, g)| (n, g.to_vec()))
        .collect();
    let mut reports = Vec::with_capacity(analytic_groups.len());
    for (gi, (name, grad)) in analytic_groups.iter().enumerate() {
        let len = grad.len();
        let coords: Vec<usize> = match options.max_coords_per_group {
            Some(n) if n < len => {
                let mut c = sample(&mut rng, len, n).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        let mut report = GroupReport {
            name: name.to_string(),
            checked: 0,
            skipped: 0,
            max_relative_error: 0.0,
            worst_index: None,
        };
        for i in coords {
            if skip(gi, i) {
                report.skipped += 1;
                continue;
            }
            let original = params.groups_mut()[gi].1[i];
            params.groups_mut()[gi].1[i] = original + options.step;
            let plus = loss(params);
            params.groups_mut()[gi].1[i] = original - options.step;
            let minus = loss(params);
            params.groups_mut()[gi].1[i] = original;
            let numeric = (plus - minus) / (2.0 * options.step);
            let err = relative_error(grad[i], numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst_index.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst_index = Some(i);
            }
        }
        reports.push(report);
    }
    GradCheckReport {
        groups: reports,
        tolerance: options.tolerance,
    }
}
