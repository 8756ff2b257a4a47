//! Shared inputs for the benchmarks.

use dosekit::{AnovaEstimate, CandidateModel, DMatrix, DVector, DoseDesign, ModelFamily};

/// Summary statistics of the neurodegenerative-disease example.
pub fn neurodeg_estimate() -> AnovaEstimate {
    let design = DoseDesign::new(vec![0.0, 1.0, 3.0, 10.0, 30.0]).expect("valid design");
    let mu = DVector::from_vec(vec![-5.099, -4.581, -3.220, -2.879, -3.520]);
    let mut s = DMatrix::from_element(5, 5, 0.0094);
    s.fill_diagonal(0.149);
    AnovaEstimate::new(design, mu, s).expect("valid estimate")
}

pub fn neurodeg_candidates() -> Vec<CandidateModel> {
    vec![
        CandidateModel::new(ModelFamily::Emax, vec![1.11]).expect("valid"),
        CandidateModel::new(ModelFamily::Quadratic, vec![-0.022]).expect("valid"),
        CandidateModel::new(ModelFamily::Exponential, vec![8.867]).expect("valid"),
        CandidateModel::linear(),
    ]
}
