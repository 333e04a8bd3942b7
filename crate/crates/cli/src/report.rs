//! Report layouts shared by the pipeline commands. Rationals are serialized
//! as reduced `"p/q"` strings with float mirrors where a human wants one;
//! field order is fixed so reruns are byte-identical.

use mechkit::model::Instance;
use mechkit::num::{parse_rat, rat_f64, rat_str, Rat};
use serde::{Deserialize, Serialize};

pub fn ser(x: &Rat) -> String {
    rat_str(x)
}

pub fn de(s: &str) -> Result<Rat, String> {
    parse_rat(s)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LambdaEntry {
    pub bidder: usize,
    pub item: usize,
    pub value_index: usize,
    pub beta_index: usize,
    pub delta_index: usize,
    pub value: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LambdaHatEntry {
    pub bidder: usize,
    pub item: usize,
    pub beta_index: usize,
    pub delta_index: usize,
    pub value: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WEntry {
    pub bidder: usize,
    pub item: usize,
    pub value_index: usize,
    pub value: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RppReport {
    /// prices[bidder][item]; null marks an item never offered.
    pub prices: Vec<Vec<Option<String>>>,
    pub order: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TptReport {
    #[serde(rename = "Q")]
    pub q: Vec<String>,
    pub order: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub version: String,
    pub instance_sha256: String,
    pub seed: u64,
    pub arith: String,
    pub mode: String,
    pub poly_samples: Option<usize>,
    pub prev: String,
    pub prev_float: f64,
    /// Optimum of the relaxation over the exact per-bidder polytopes.
    pub opt_lp: Option<String>,
    /// Optimum over the approximate polytopes (sampled mode).
    pub opt_lp_approx: Option<String>,
    pub objective: String,
    pub objective_float: f64,
    pub objective_equals_two_sum_q: bool,
    #[serde(rename = "Q")]
    pub q: Vec<String>,
    pub q_float: Vec<f64>,
    pub rpp: RppReport,
    pub tpt: TptReport,
    pub d: Vec<String>,
    pub w: Vec<WEntry>,
    pub lambda: Vec<LambdaEntry>,
    pub lambda_hat: Vec<LambdaHatEntry>,
    pub instance: Instance,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OptReport {
    pub version: String,
    pub instance_sha256: String,
    pub arith: String,
    pub opt: String,
    pub opt_float: f64,
    /// Per profile: flattened profile index and the assignment distribution
    /// (receiver per item, n = unsold, with probability).
    pub witness_allocation: Vec<Vec<(Vec<usize>, String)>>,
    pub interim_payments: Vec<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CompareReport {
    pub version: String,
    pub instance_sha256: String,
    pub seed: u64,
    pub prev: String,
    pub opt: String,
    pub opt_lp: String,
    pub rev_tpt: String,
    pub rev_rpp: String,
    pub best_ratio: f64,
    pub chain_pass: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SampleReport {
    pub version: String,
    pub instance_sha256: String,
    pub seed: u64,
    pub eps: f64,
    pub delta: f64,
    pub sample_count: usize,
    pub trials: usize,
    pub exceedances: usize,
    pub rescaled: bool,
    pub scale_divisor: String,
    /// Revenue of the mechanisms computed on the first trial's empirical
    /// instance, evaluated on the true instance, next to the true optimum.
    pub opt_true: String,
    pub rev_rpp_true: String,
    pub rev_tpt_true: String,
    pub revenue_gap_float: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub version: String,
    pub tau: Vec<String>,
    pub tau_float: Vec<f64>,
    pub tau_discrete_jump: Vec<bool>,
    #[serde(rename = "Q")]
    pub q: Vec<String>,
    #[serde(rename = "Q_hat")]
    pub q_hat: Vec<String>,
    pub q_hat_leq_q: bool,
    /// sum_j (Q_j - hatQ_j), reported against 236.5 * prev.
    pub shifted_gap_float: f64,
    pub shifted_gap_bound_float: f64,
    pub mu_checks: usize,
    pub mu_violations: Vec<String>,
    pub eta_checks: usize,
    pub eta_violations: Vec<String>,
}

pub fn float(x: &Rat) -> f64 {
    rat_f64(x)
}
