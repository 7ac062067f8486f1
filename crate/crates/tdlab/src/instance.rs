//! A fully prepared problem instance: model, policies, features, exact
//! moments, spectral constants, and projection radii, bundled so algorithm
//! runs and condition checks share one immutable context.

use crate::env::{
    estimate_mixing, induced_chain, stationary_distribution, FeatureMap, MDPModel,
    MixingEstimate, Policy, Transition,
};
use crate::error::Result;
use crate::numerics::{Matrix, Vector};
use crate::stats::{
    compute_radii, exact_moments, importance_ratio, sample_stats, spectral_constants,
    ExactMoments, Radii, SampleStats, SpectralConstants,
};

/// Immutable, shareable instance context.
#[derive(Debug, Clone)]
pub struct Instance {
    pub id: String,
    pub model: MDPModel,
    pub features: FeatureMap,
    pub target: Policy,
    pub behavior: Policy,
    /// Stationary distribution of the behavior-induced chain.
    pub mu: Vector,
    pub moments: ExactMoments,
    pub spectral: SpectralConstants,
    pub radii: Radii,
    /// Importance ratios rho(s, a), precomputed for fast sampling.
    pub rho: Matrix,
}

impl Instance {
    /// Build the full context from model + policies + features.
    pub fn build(
        id: &str,
        model: MDPModel,
        features: FeatureMap,
        target: Policy,
        behavior: Policy,
        safety: f64,
    ) -> Result<Instance> {
        let chain = induced_chain(&model, &behavior)?;
        let mu = stationary_distribution(&chain)?;
        let moments = exact_moments(&model, &target, &behavior, &features, &mu)?;
        let spectral = spectral_constants(&moments, &target, &behavior, model.r_max)?;
        let radii = compute_radii(&moments, safety);
        let mut rho = Matrix::zeros(model.n_states, model.n_actions);
        for s in 0..model.n_states {
            for a in 0..model.n_actions {
                rho.set(s, a, importance_ratio(&target, &behavior, s, a)?);
            }
        }
        Ok(Instance {
            id: id.to_string(),
            model,
            features,
            target,
            behavior,
            mu,
            moments,
            spectral,
            radii,
            rho,
        })
    }

    /// Per-sample statistics of a transition under this instance.
    pub fn stats_of(&self, x: &Transition) -> SampleStats {
        sample_stats(x, &self.features, self.model.gamma, self.rho.at(x.s, x.a))
    }

    /// Fit the geometric-ergodicity envelope of the behavior-induced chain.
    pub fn mixing(&self, t_max: usize) -> Result<MixingEstimate> {
        let chain = induced_chain(&self.model, &self.behavior)?;
        estimate_mixing(&chain, &self.mu, t_max)
    }
}
