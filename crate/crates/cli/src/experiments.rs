//! Per-experiment headers and grid-point evaluation.

use std::sync::Arc;

use immse::bayes::posterior_stats_with;
use immse::grad::{check_gradient, scaling_connection_residual, MatrixSel};
use immse::info::{low_snr_expansion, mi_snr_derivative, mutual_information_with};
use immse::integrate::derive_seed;
use immse::linalg::{c, hermitian_eigen_desc, power, CMat};
use immse::opt::{mercury_waterfilling, solve_power_allocation, solve_precoders, MmseCurve, PowerOptions, PrecoderOptions};
use immse::{Constellation, Error, MacSystem, Result, User};

use crate::report::report_from;
use crate::sweep::{Experiment, GridPoint, SweepSpec};

/// Column names, axes first.
pub fn header(spec: &SweepSpec) -> Vec<String> {
    let axes: &[&str] = if spec.experiment.axes_are_budgets() { &["snr", "q1", "q2"] } else { &["snr", "p1", "p2"] };
    let n_t = spec.template.n_t();
    let per = |prefix: &'static str| (1..=n_t).map(move |j| format!("{prefix}_{j}"));
    let metrics: Vec<String> = match spec.experiment {
        Experiment::MiSurface => names(&["mi_bits", "mi_bits_se"]),
        Experiment::MmseSurface => names(&["mmse_total", "mmse_total_se", "psi", "psi_se", "combined", "combined_se"]),
        Experiment::PerUserMmse => names(&["mmse1", "mmse1_se", "mmse2", "mmse2_se"]),
        Experiment::CovarianceSurface => names(&["cross1", "cross1_se", "cross2", "cross2_se"]),
        Experiment::PowerAllocation => per("power1")
            .chain(per("power2"))
            .chain(names(&["gamma1", "gamma2", "kkt_residual", "iterations", "converged", "mi_bits", "mi_bits_se"]))
            .collect(),
        Experiment::ImmseCheck => names(&[
            "mi_bits",
            "mi_bits_se",
            "di_dsnr",
            "di_dsnr_se",
            "mmse_plus_psi",
            "mmse_plus_psi_se",
            "psi",
            "psi_se",
            "rel_error",
        ]),
        Experiment::GradientCheck => names(&[
            "rel_error_p1",
            "rel_error_p2",
            "scale_p1",
            "scale_p2",
            "fd_se_p1",
            "fd_se_p2",
            "scaling_residual",
        ]),
        Experiment::LowSnrCheck => names(&["mi_nats", "mi_nats_se", "first_order", "second_order", "rel_error"]),
        Experiment::Precode => names(&[
            "mi_bits",
            "mi_bits_se",
            "power1",
            "power2",
            "nu1",
            "nu2",
            "kkt_residual",
            "iterations",
            "converged",
            "restart",
        ]),
        Experiment::Mercury => per("power").chain(names(&["gamma", "kkt_residual", "converged", "mi_bits", "mi_bits_se"])).collect(),
    };
    axes.iter().map(|s| s.to_string()).chain(metrics).collect()
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Rescales `p` to `Tr PP† = target`; a zero template becomes a scaled
/// identity.
pub fn scale_to_power(p: &CMat, target: f64) -> CMat {
    let n = p.ncols();
    if target == 0.0 {
        return CMat::zeros(p.nrows(), n);
    }
    let pw = power(p);
    if pw > 0.0 {
        p * c((target / pw).sqrt(), 0.0)
    } else {
        CMat::identity(p.nrows(), n) * c((target / n as f64).sqrt(), 0.0)
    }
}

/// The template at a grid point whose p-axes are transmitted powers.
pub fn system_at(spec: &SweepSpec, pt: &GridPoint) -> Result<MacSystem> {
    let t = &spec.template;
    t.with_snr(pt.snr)?
        .with_precoders(scale_to_power(t.p1(), pt.p1), scale_to_power(t.p2(), pt.p2))
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn evaluate(spec: &SweepSpec, pt: &GridPoint) -> Result<Vec<f64>> {
    let seed = derive_seed(spec.seed, pt.index as u64);
    let ev = spec.evaluator(seed, spec.n_samples);
    let mut row = vec![pt.snr, pt.p1, pt.p2];
    match spec.experiment {
        Experiment::MiSurface => {
            let mi = mutual_information_with(&system_at(spec, pt)?, &ev)?.to_bits();
            row.extend([mi.value, mi.std_error]);
        }
        Experiment::MmseSurface => {
            let st = posterior_stats_with(&system_at(spec, pt)?, &ev)?;
            let se = &st.std_errors;
            row.extend([st.mmse_total, se.mmse_total, st.psi_oracle, se.psi_oracle, st.combined, se.combined]);
        }
        Experiment::PerUserMmse => {
            let st = posterior_stats_with(&system_at(spec, pt)?, &ev)?;
            row.extend([st.mmse1, st.std_errors.mmse1, st.mmse2, st.std_errors.mmse2]);
        }
        Experiment::CovarianceSurface => {
            let sys = system_at(spec, pt)?;
            let rep = report_from(&sys, &posterior_stats_with(&sys, &ev)?);
            // signed as the terms enter the gradients
            for u in User::both() {
                let (v, se) = rep.trace(u);
                row.extend([-v, se]);
            }
        }
        Experiment::PowerAllocation => {
            let sys = spec.template.with_snr(pt.snr)?;
            let mut opts = PowerOptions::new(spec.evaluator(seed, spec.solver.samples_initial));
            if let Some(t) = spec.solver.tolerance {
                opts.tolerance = t;
            }
            if let Some(m) = spec.solver.max_iters {
                opts.max_iters = m;
            }
            let r = solve_power_allocation(&sys, [pt.p1, pt.p2], &opts)?;
            row.extend(r.powers1.iter().chain(&r.powers2).copied());
            let diag = |p: &[f64]| CMat::from_diagonal(&nalgebra::DVector::from_iterator(p.len(), p.iter().map(|x| c(x.sqrt(), 0.0))));
            let fin = sys.with_precoders(diag(&r.powers1), diag(&r.powers2))?;
            let mi = mutual_information_with(&fin, &ev)?.to_bits();
            row.extend([r.gamma1, r.gamma2, r.kkt_residual, r.iterations as f64, flag(r.converged), mi.value, mi.std_error]);
        }
        Experiment::ImmseCheck => {
            let sys = system_at(spec, pt)?;
            let h = spec.fd_step * pt.snr;
            let (mi, d, d_se) = mi_snr_derivative(&sys, h, &ev)?;
            let st = posterior_stats_with(&sys, &spec.evaluator(derive_seed(seed, 1), spec.n_samples))?;
            let mi = mi.to_bits();
            let rel = (d - st.combined).abs() / d.abs();
            row.extend([
                mi.value,
                mi.std_error,
                d,
                d_se,
                st.combined,
                st.std_errors.combined,
                st.psi_oracle,
                st.std_errors.psi_oracle,
                rel,
            ]);
        }
        Experiment::GradientCheck => {
            let sys = system_at(spec, pt)?;
            let fd_ev = spec.evaluator(derive_seed(seed, 1), spec.n_samples);
            let mut rel = Vec::new();
            let mut scale = Vec::new();
            let mut fd_se = Vec::new();
            for u in User::both() {
                let r = check_gradient(&sys, MatrixSel::Precoder(u), &ev, &fd_ev, None)?;
                rel.push(r.rel_error);
                scale.push(r.convention_scale);
                fd_se.push(r.numeric_std_error.norm());
            }
            let st = posterior_stats_with(&sys, &ev)?;
            let res = User::both().iter().map(|&u| scaling_connection_residual(&sys, &st, u)).fold(0.0, f64::max);
            row.extend([rel[0], rel[1], scale[0], scale[1], fd_se[0], fd_se[1], res]);
        }
        Experiment::LowSnrCheck => {
            if !(pt.snr > 0.0) {
                return Err(Error::Config {
                    key: "snr_range".into(),
                    reason: "the low-snr check needs positive snr".into(),
                });
            }
            let sys = system_at(spec, pt)?;
            let mi = mutual_information_with(&sys, &ev)?.to_nats();
            let exp = low_snr_expansion(&sys);
            let first = exp.first_order * pt.snr;
            row.extend([mi.value, mi.std_error, first, exp.second_order * pt.snr * pt.snr, (mi.value - first).abs() / mi.value]);
        }
        Experiment::Precode => {
            let q = [pt.p1, pt.p2];
            let optimize = [q[0] > 0.0, q[1] > 0.0];
            let t = &spec.template;
            let mut base = t.with_snr(pt.snr)?;
            for u in User::both() {
                if !optimize[u.index()] {
                    base = base.with_precoder(u, CMat::zeros(t.n_t(), t.n_t()))?;
                }
            }
            let mut opts = PrecoderOptions::with_evaluator(seed, spec.evaluator(seed, spec.solver.samples_initial));
            opts.damping = spec.solver.damping;
            opts.restarts = spec.solver.restarts;
            opts.optimize = optimize;
            if let Some(t) = spec.solver.tolerance {
                opts.tolerance = t;
            }
            if let Some(m) = spec.solver.max_iters {
                opts.max_iters = m;
            }
            let s = solve_precoders(&base, q[0], q[1], &opts)?;
            let fin = base.with_precoders(s.p1.clone(), s.p2.clone())?;
            let mi = mutual_information_with(&fin, &ev)?.to_bits();
            row.extend([
                mi.value,
                mi.std_error,
                power(&s.p1),
                power(&s.p2),
                s.nu1,
                s.nu2,
                s.kkt_residual,
                s.iterations as f64,
                flag(s.converged),
                s.restart as f64,
            ]);
        }
        Experiment::Mercury => {
            let h = spec.template.h1();
            let (gains, _) = hermitian_eigen_desc(&(h.adjoint() * h));
            let curve = if spec.gaussian_curve {
                MmseCurve::gaussian()
            } else {
                let base = Constellation::from_name(&spec.c1_name).map_err(|e| Error::Config {
                    key: "c1".into(),
                    reason: e.to_string(),
                })?;
                MmseCurve::discrete(Arc::new(base))?
            };
            let r = mercury_waterfilling(&gains, pt.p1, pt.snr, &curve)?;
            row.extend(r.powers1.iter().copied());
            let mut mi = 0.0;
            for (g, p) in gains.iter().zip(&r.powers1) {
                mi += curve.mi(pt.snr * g * p)?;
            }
            row.extend([r.gamma1, r.kkt_residual, flag(r.converged), mi / std::f64::consts::LN_2, 0.0]);
        }
    }
    Ok(row)
}
