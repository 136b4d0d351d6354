//! Agreement statistics between predicted and subjective scores.

mod correlation;
mod logistic;
mod significance;

use serde::{Deserialize, Serialize};

pub use correlation::{pearson, ranks, rmse_raw, srocc};
pub use logistic::{fit_logistic5, logistic5, plcc_rmse, LogisticFit, MappedAgreement};
pub use significance::{krasula_analysis, rank_sum_auc, ttest_runs, welch_test, KrasulaReport, DEFAULT_ALPHA};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub srocc: f64,
    pub plcc: f64,
    pub rmse: f64,
    pub logistic: [f64; 5],
    pub fit_converged: bool,
    pub krasula: Option<KrasulaReport>,
}

impl EvalReport {
    pub fn compute(pred: &[f64], subj: &[f64], observers: Option<&[Vec<f64>]>) -> Result<Self> {
        let s = srocc(pred, subj)?;
        let m = plcc_rmse(pred, subj)?;
        let krasula = observers
            .map(|o| krasula_analysis(pred, o, DEFAULT_ALPHA))
            .transpose()?;
        Ok(Self {
            samples: pred.len(),
            srocc: s,
            plcc: m.plcc,
            rmse: m.rmse,
            logistic: m.fit.params,
            fit_converged: m.fit.converged,
            krasula,
        })
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "samples = {}\nsrocc = {:.6}\nplcc = {:.6}\nrmse = {:.6}\n",
            self.samples, self.srocc, self.plcc, self.rmse
        );
        for (i, b) in self.logistic.iter().enumerate() {
            out += &format!("beta{} = {:.6e}\n", i + 1, b);
        }
        out += &format!("fit_converged = {}\n", self.fit_converged);
        if let Some(k) = &self.krasula {
            let opt = |v: Option<f64>| v.map_or("n/a".to_owned(), |x| format!("{x:.6}"));
            out += &format!(
                "auc_ds = {}\nauc_bw = {}\ncc = {}\ndifferent_pairs = {}\nsimilar_pairs = {}\n",
                opt(k.auc_ds),
                opt(k.auc_bw),
                opt(k.cc),
                k.different_pairs,
                k.similar_pairs
            );
        }
        out
    }
}
