//! Prequential (test-then-train) evaluation counters.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::model::ClassLabel;

/// Binary confusion counts with malicious as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    fn cell(&mut self, predicted: ClassLabel, truth: ClassLabel) -> &mut u64 {
        match (predicted, truth) {
            (ClassLabel::Malicious, ClassLabel::Malicious) => &mut self.tp,
            (ClassLabel::Malicious, ClassLabel::Benign) => &mut self.fp,
            (ClassLabel::Benign, ClassLabel::Benign) => &mut self.tn,
            (ClassLabel::Benign, ClassLabel::Malicious) => &mut self.fn_,
        }
    }

    pub fn add(&mut self, predicted: ClassLabel, truth: ClassLabel) {
        *self.cell(predicted, truth) += 1;
    }

    fn remove(&mut self, predicted: ClassLabel, truth: ClassLabel) {
        *self.cell(predicted, truth) -= 1;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Rates are 0 when their denominator is empty.
    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn summary(&self) -> RateSummary {
        RateSummary { n: self.total(), accuracy: self.accuracy(), tpr: self.tpr(), fpr: self.fpr(), counts: *self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub n: u64,
    pub accuracy: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub counts: Confusion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrequentialMetrics {
    window_size: usize,
    window: VecDeque<(ClassLabel, ClassLabel)>,
    windowed: Confusion,
    cumulative: Confusion,
    pub records_processed: u64,
    pub alerts_emitted: u64,
}

impl PrequentialMetrics {
    pub fn new(window_size: usize) -> Self {
        let window_size = window_size.max(1);
        Self {
            window_size,
            window: VecDeque::with_capacity(window_size),
            windowed: Confusion::default(),
            cumulative: Confusion::default(),
            records_processed: 0,
            alerts_emitted: 0,
        }
    }

    pub fn update(&mut self, predicted: ClassLabel, truth: ClassLabel) {
        if self.window.len() == self.window_size {
            let (p, t) = self.window.pop_front().expect("full window");
            self.windowed.remove(p, t);
        }
        self.window.push_back((predicted, truth));
        self.windowed.add(predicted, truth);
        self.cumulative.add(predicted, truth);
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn windowed(&self) -> &Confusion {
        &self.windowed
    }

    pub fn cumulative(&self) -> &Confusion {
        &self.cumulative
    }
}

/// Free-function form of [`PrequentialMetrics::update`].
pub fn prequential_update(mut metrics: PrequentialMetrics, predicted: ClassLabel, truth: ClassLabel) -> PrequentialMetrics {
    metrics.update(predicted, truth);
    metrics
}
