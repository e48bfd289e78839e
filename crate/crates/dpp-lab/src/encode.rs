//! JSON views of core reports.

use dpp_core::barriers::{AnnularBarrier, BarrierReport, GlobalBarrier};
use dpp_core::envelope::AbpAudit;
use dpp_core::regularity::*;
use dpp_core::solver::{Scheme, SolveReport};
use num_rational::Ratio;
use serde_json::{json, Value};

use crate::output::{num, nums, opt, tagged};

pub fn ratio(r: Ratio<u64>) -> Value {
    json!({ "exact": format!("{}/{}", r.numer(), r.denom()), "value": num(*r.numer() as f64 / *r.denom() as f64) })
}

/// Wall time is left out so that reports stay reproducible.
pub fn solve_report(r: &SolveReport) -> Value {
    json!({
        "iterations": r.iterations,
        "certificate": num(r.certificate),
        "update_norm": num(r.update_norm),
        "tol": num(r.tol),
        "scheme": match r.scheme { Scheme::Jacobi => "jacobi", Scheme::GaussSeidel => "gauss-seidel" },
        "converged": r.converged,
    })
}

pub fn constants(c: &RegularityConstants) -> Value {
    json!({
        "dim": c.dim,
        "lambda": num(c.lambda),
        "beta": num(c.beta),
        "eps0": tagged(&c.eps0),
        "rho": tagged(&c.rho),
        "nbhd_c": tagged(&c.nbhd_c),
        "psi_big0": tagged(&c.psi_big0),
        "psi_small0": tagged(&c.psi_small0),
        "big_m": tagged(&c.big_m),
        "mu": tagged(&c.mu),
        "spreading_n": c.spreading_n,
        "c": tagged(&c.c),
        "a": tagged(&c.a),
        "d": tagged(&c.d),
        "sigma": tagged(&c.sigma),
        "kappa": tagged(&c.kappa),
        "lambda_exp": tagged(&c.lambda_exp),
        "gamma": tagged(&c.gamma),
        "holder_c": tagged(&c.holder_c),
        "harnack_c": tagged(&c.harnack_c),
        "delta": tagged(&c.delta),
        "c_tilde": tagged(&c.c_tilde),
    })
}

pub fn level_set(m: &LevelSetMeasure) -> Value {
    json!({
        "threshold": num(m.threshold),
        "count": m.count,
        "total": m.total,
        "fraction": ratio(m.fraction),
        "measure": num(m.measure),
        "slack": num(m.slack),
    })
}

pub fn bounds(b: &OperatorBounds) -> Value {
    json!({ "max_l_minus": num(b.max_l_minus), "min_l_plus": num(b.min_l_plus), "nodes": b.nodes })
}

pub fn measure_estimate(r: &MeasureEstimateReport) -> Value {
    json!({
        "big_m": tagged(&r.big_m),
        "mu": num(r.mu),
        "inf_q3": num(r.inf_q3),
        "measure": level_set(&r.measure),
        "empirical_m": num(r.empirical_m),
        "pass": r.pass,
    })
}

pub fn spreading(r: &SpreadingReport) -> Value {
    json!({
        "eps0": num(r.constant.eps0),
        "n": r.constant.n,
        "convolution": tagged(&r.constant.conv),
        "c": tagged(&r.constant.c),
        "min_q1": num(r.min_q1),
        "slack": num(r.slack),
        "rows": r.rows.iter().map(|row| json!({
            "k": num(row.k),
            "measure": num(row.measure),
            "c_over_k": num(row.c_over_k),
            "triggered": row.triggered,
            "holds": row.holds,
        })).collect::<Vec<_>>(),
        "empirical_c": opt(r.empirical_c),
        "pass": r.pass,
    })
}

pub fn cz_outcome(o: &CzOutcome) -> Value {
    match o {
        CzOutcome::Conclusion {
            holds,
            selected,
            residual,
            measure_a,
            bound,
        } => json!({
            "status": "conclusion",
            "holds": holds,
            "selected": selected,
            "residual": residual,
            "measure_a": num(*measure_a),
            "bound": num(*bound),
        }),
        CzOutcome::HypothesisViolated(m) => json!({ "status": "hypothesis-violated", "detail": m }),
        CzOutcome::Skipped(m) => json!({ "status": "skipped", "detail": m }),
    }
}

pub fn superlevel(r: &SuperlevelReport) -> Value {
    json!({
        "k_base": num(r.k_base),
        "k_base_log10": num(r.k_base.log10()),
        "generations": r.generations,
        "l_max": r.l_max,
        "max_rescale": num(r.max_rescale),
        "slack": num(r.slack),
        "rows": r.rows.iter().map(|row| json!({
            "k": row.k,
            "threshold": num(row.threshold),
            "threshold_log10": num(row.threshold.log10()),
            "measure": num(row.measure),
            "bound": num(row.bound),
            "pass": row.pass,
            "cz": cz_outcome(&row.cz),
        })).collect::<Vec<_>>(),
        "pass": r.pass,
    })
}

pub fn profile(p: &LevelSetProfile) -> Value {
    json!({ "thresholds": nums(&p.thresholds), "measures": nums(&p.measures), "slack": num(p.slack) })
}

pub fn decay(r: &DecayFitReport) -> Value {
    json!({
        "a": tagged(&r.a),
        "d": tagged(&r.d),
        "slack": num(r.slack),
        "rows": r.rows.iter().map(|row| json!({
            "t": num(row.t),
            "measure": num(row.measure),
            "bound": num(row.bound),
            "pass": row.pass,
        })).collect::<Vec<_>>(),
        "fit": r.fit.map(|f| json!({ "a": num(f.a), "d": num(f.d), "points": f.points, "r2": num(f.r2) })),
        "pass": r.pass,
    })
}

pub fn de_giorgi(r: &DeGiorgiReport) -> Value {
    json!({
        "theta": num(r.theta),
        "eta": num(r.eta),
        "ln_eta": num(r.ln_eta),
        "log10_eta": num(r.ln_eta / std::f64::consts::LN_10),
        "max_l_minus": num(r.max_l_minus),
        "mass_above_one": level_set(&r.mass_above_one),
        "inf_q3": num(r.inf_q3),
        "margin": num(r.margin),
        "pass": r.pass,
    })
}

pub fn oscillation(r: &OscillationReport) -> Value {
    json!({
        "radius": num(r.radius),
        "k_factor": num(r.k_factor),
        "theta": num(r.theta),
        "big_m": num(r.big_m),
        "small_m": num(r.small_m),
        "eta": num(r.eta),
        "c_const": num(r.c_const),
        "rho": num(r.rho),
        "sup_br": num(r.sup_br),
        "rhs": num(r.rhs),
        "margin": num(r.margin),
        "observed_eta": opt(r.observed_eta),
        "branch": match r.branch { CaseBranch::Contraction => "contraction", CaseBranch::Trivial => "trivial" },
        "pass": r.pass,
    })
}

pub fn holder(r: &HolderReport) -> Value {
    json!({
        "radius": num(r.radius),
        "eps": num(r.eps),
        "rho": num(r.rho),
        "sup_abs": num(r.sup_abs),
        "nodes": r.nodes,
        "pairs": r.pairs,
        "modulus": r.modulus.iter().map(|m| json!([num(m.0), num(m.1)])).collect::<Vec<_>>(),
        "gamma_est": opt(r.gamma_est),
        "gamma": num(r.gamma),
        "c_est": num(r.c_est),
        "c_by_gamma": r.c_by_gamma.iter().map(|m| json!([num(m.0), num(m.1)])).collect::<Vec<_>>(),
        "worst_ratio": num(r.worst_ratio),
        "audit_pass": r.audit_pass,
    })
}

pub fn harnack(r: &HarnackReport) -> Value {
    json!({
        "sup_b1": num(r.inputs.sup_b1),
        "inf_b1": num(r.inputs.inf_b1),
        "sup_b3": num(r.inputs.sup_b3),
        "rho": num(r.rho),
        "eps": num(r.eps),
        "lambda_exp": num(r.lambda_exp),
        "c_tilde": tagged(&r.c_tilde),
        "eps_term": num(r.eps_term),
        "ln_rhs": num(r.ln_rhs),
        "log10_rhs": num(r.ln_rhs / std::f64::consts::LN_10),
        "rhs": if r.rhs.is_finite() { num(r.rhs) } else { Value::Null },
        "classical_quotient": num(r.classical_quotient),
        "hypotheses_checked": r.hypotheses_checked,
        "pass": r.pass,
    })
}

pub fn trace(t: &ApujaTrace) -> Value {
    json!({
        "constants": { "c": num(t.constants.c), "gamma": num(t.constants.gamma), "lambda": num(t.constants.lambda), "kappa": num(t.constants.kappa) },
        "delta": num(t.delta),
        "k0": t.k0,
        "radii": nums(&t.radii),
        "ln_levels": nums(&t.ln_levels),
        "identity_lhs_ln": num(t.identity_lhs_ln),
        "identity_rhs_ln": num(t.identity_rhs_ln),
        "identity_holds": t.identity_holds,
        "level": num(t.level),
        "chain": t.chain.iter().map(|s| json!({
            "k": s.k,
            "x": nums(&s.x),
            "value": num(s.value),
            "required": num(s.required),
            "above": s.above,
        })).collect::<Vec<_>>(),
        "first_drop": t.first_drop,
        "max_norm": num(t.max_norm),
        "stays_in_b2": t.stays_in_b2,
        "contradiction": t.contradiction,
        "ln_c_tilde": num(t.ln_c_tilde),
        "harnack_holds": t.harnack_holds,
    })
}

pub fn pipeline(r: &PipelineReport) -> Value {
    json!({
        "constants": constants(&r.constants),
        "scale": num(r.scale),
        "eps": num(r.eps),
        "bounds": bounds(&r.bounds),
        "checks": r.checks().iter().map(|(n, p)| json!({ "name": n, "pass": p })).collect::<Vec<_>>(),
        "pass": r.pass,
    })
}

pub fn global_barrier(b: &GlobalBarrier) -> Value {
    json!({
        "dim": b.dim,
        "lambda": num(b.lambda),
        "beta": num(b.beta),
        "sigma": num(b.sigma),
        "a": if b.a.is_finite() { num(b.a) } else { Value::Null },
        "log10_a": num(b.log_a / std::f64::consts::LN_10),
        "b": if b.b.is_finite() { num(b.b) } else { Value::Null },
        "eps0": num(b.eps0),
    })
}

pub fn annular_barrier(b: &AnnularBarrier) -> Value {
    json!({
        "dim": b.dim,
        "center": nums(&b.center),
        "r": num(b.r),
        "eps": num(b.eps),
        "sigma": num(b.sigma),
        "kappa": num(b.kappa),
        "eps0": num(b.eps0),
        "u_inf": num(b.u_inf),
        "a": num(b.a),
    })
}

pub fn barrier_report(r: &BarrierReport) -> Value {
    json!({
        "samples": r.samples,
        "min_margin": num(r.min_margin),
        "min_relative_margin": num(r.min_relative_margin),
        "worst_point": nums(&r.worst_point),
        "tol_barrier": num(r.tol_barrier),
        "min_l_minus": num(r.min_l_minus),
        "net_resolution": num(r.net_resolution),
        "moment_error": num(r.moment_error),
        "pass": r.pass,
    })
}

pub fn abp_audit(a: &AbpAudit) -> Value {
    json!({
        "sup_u": num(a.sup_u),
        "rhs": num(a.rhs),
        "ratio": opt(a.ratio),
        "degenerate": a.degenerate,
        "contact_nodes": a.contact_nodes,
        "cover_cubes": a.cover_cubes,
        "min_residual": num(a.min_residual),
    })
}
