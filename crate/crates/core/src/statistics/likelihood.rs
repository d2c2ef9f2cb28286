//! Likelihood-ratio statistic `log Q*(column | z) - log Q(column | z)`.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::samplers::ConditionalGaussianLaw;

/// Log likelihood ratio of each design column, summed over rows. Values are
/// returned in log space; ranks are unchanged by exponentiation.
pub fn likelihood_ratio_scores(
    design: &DMatrix<f64>,
    z: &DMatrix<f64>,
    star: &ConditionalGaussianLaw,
    proposal: &ConditionalGaussianLaw,
) -> Result<Vec<f64>> {
    let m_star = star.means(z)?;
    let m_prop = proposal.means(z)?;
    Ok(design
        .column_iter()
        .map(|c| {
            star.column_log_density(c.iter().copied(), &m_star)
                - proposal.column_log_density(c.iter().copied(), &m_prop)
        })
        .collect())
}
