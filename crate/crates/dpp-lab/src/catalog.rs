//! Human-readable catalog of experiment kinds.

use crate::config::ExperimentKind;
use crate::LabError;

pub struct Entry {
    pub kind: ExperimentKind,
    pub summary: &'static str,
    pub statement: &'static str,
    pub parameters: &'static str,
}

pub fn entry(kind: ExperimentKind) -> Entry {
    let (summary, statement, parameters) = match kind {
        ExperimentKind::Solve => (
            "Solve the DPP by value iteration and certify the fixed point.",
            "u = α∫u(x+εz)dν_x + β⨍_{B_ε(x)}u + ε²f in Ω, u = g outside Ω; \
             with f ≡ 0 the solution stays within [min g, max g].",
            "problem.*, tolerances.solver",
        ),
        ExperimentKind::BarrierCheck => (
            "Verify the global and annular barrier functions.",
            "Global: Ψ = 2 at |x| = (3/2)√N, Ψ = 0 at |x| = 2√N, ψ ≤ 0 for |x| ≥ 1/4 and \
             L_ε⁻Ψ ≥ −ψ in B_{2√N} for ε ≤ ε₀. Annular: the profile equals inf u on the \
             inner sphere, vanishes at radius 4 and L_ε⁻ of it stays nonnegative.",
            "experiment.samples, experiment.dims, seed",
        ),
        ExperimentKind::AbpCheck => (
            "Run the ε-ABP estimate on a solved subsolution.",
            "sup_{B_{2√N}} u is compared with (Σ_{Q ∈ cover} (sup_Q f⁺)ᴺ|Q|)^{1/N} over the \
             ε/4-cubes meeting the contact set of the concave envelope.",
            "experiment.method, experiment.compare_methods, tolerances.envelope_agreement",
        ),
        ExperimentKind::CzDemo => (
            "Stopped Calderón–Zygmund decomposition on random admissible pairs.",
            "A ⊂ B ⊂ Q₁ with |A| ≤ δ₁ and the selection rules for δ₁, δ₂ up to generation L \
             give |A| ≤ δ₁|B| + δ₂, verified in exact rationals.",
            "experiment.levels, experiment.l_max, experiment.delta1, experiment.delta2, experiment.trials, seed",
        ),
        ExperimentKind::Levelsets => (
            "Level-set measure estimates for a nonnegative supersolution.",
            "With inf_{Q₃}u ≤ 1 and L_ε⁻u ≤ ρ: |{u > M} ∩ Q₁| ≤ μ, the spreading bound, \
             |{u > K^k} ∩ Q₁| ≤ c/((1−μ)K) + μ^k and |{u > t} ∩ Q₁| ≤ d·e^{−√(ln t/a)}.",
            "experiment.mu, experiment.rho, experiment.thresholds, experiment.ladder_k",
        ),
        ExperimentKind::DeGiorgi => (
            "De Giorgi type lemma and its oscillation form.",
            "If L_ε⁻u ≤ ηρ and |Q₁ ∩ {u > 1}| ≥ θ then inf_{Q₃}u ≥ η(θ) with \
             ln η = −a(ln(d/θ))²; for subsolutions sup_{B_R}u ≤ (1−η)M + ηm + CR²ρ.",
            "experiment.theta, experiment.radius, experiment.mu, experiment.rho",
        ),
        ExperimentKind::Holder => (
            "Empirical asymptotic Hölder estimate with an exhaustive audit.",
            "|u(x) − u(z)| ≤ C(sup_{B_R}|u| + R²ρ)(|x−z|^γ + ε^γ)/R^γ for x, z ∈ B_{R/2}; \
             γ and C are estimated and audited on every sampled pair.",
            "experiment.radius, experiment.max_nodes, experiment.refine, tolerances.holder_stability",
        ),
        ExperimentKind::Harnack => (
            "Asymptotic Harnack inequality with the ε-correction term.",
            "sup_{B₁}u ≤ C̃(inf_{B₁}u + ρ + ε^{2λ} sup_{B₃}u), with λ = 2σ from the annular \
             barrier; the classical quotient sup/inf is reported alongside.",
            "experiment.a_values (axis-atom family), pipeline parameters otherwise",
        ),
        ExperimentKind::Counterexample => (
            "Explicit DPP solution where the classical Harnack inequality fails.",
            "Axis atoms at ±εe₁ with α ∈ (0,1): u = 1 off the axis, u(kε e₁) = a_k from \
             a_{k+1} = (2/α)(a_k − 1 + α) − a_{k−1}; inf_{B₁}u = 1 while sup_{B₁}u ≥ a.",
            "experiment.a_values, problem.alpha, problem.eps, problem.h",
        ),
        ExperimentKind::Convergence => (
            "ε → 0 convergence against closed-form limits.",
            "u_ε → v uniformly on B_{1/2}, where Tr(D²v A) = −f with A the limit second-moment \
             matrix of the DPP.",
            "experiment.case, experiment.eps_ladder, experiment.h_ratio, tolerances.max_final_error",
        ),
    };
    Entry {
        kind,
        summary,
        statement,
        parameters,
    }
}

pub fn list() -> String {
    ExperimentKind::ALL.iter().map(|&k| format!("{:<15} {}\n", k.name(), entry(k).summary)).collect()
}

pub fn describe(name: &str) -> Result<String, LabError> {
    let kind: ExperimentKind = name.parse().map_err(|_| LabError::UnknownKind {
        name: name.to_string(),
        suggestions: suggestions(name),
    })?;
    let e = entry(kind);
    Ok(format!("{}\n  {}\n\nChecks:\n  {}\n\nParameters:\n  {}\n", kind.name(), e.summary, e.statement, e.parameters))
}

/// Kinds within a small edit distance, or sharing a prefix.
pub fn suggestions(name: &str) -> Vec<String> {
    let mut scored: Vec<(usize, &str)> = ExperimentKind::ALL
        .iter()
        .map(|k| k.name())
        .map(|k| (strsim::levenshtein(name, k), k))
        .filter(|(d, k)| *d <= 3.max(name.len() / 3) || k.starts_with(name) || (!name.is_empty() && name.starts_with(&k[..1]) && *d <= k.len() / 2))
        .collect();
    scored.sort();
    scored.into_iter().map(|(_, k)| k.to_string()).collect()
}
