//! Depth error and threshold-accuracy metrics over valid pixels.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::RgbdSample;
use crate::net::Network;
use crate::nn::ParamStore;
use crate::tensor::{ops, Real, Tensor};

/// Accuracy thresholds `1.25^k`, k = 1, 2, 3 (strict inequality).
pub const THRESHOLDS: [f64; 3] = [1.25, 1.5625, 1.953125];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rel: f64,
    pub rms: f64,
    pub log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub pixel_count: u64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "rel,rms,log10,delta1,delta2,delta3,pixel_count";

    pub fn deltas(&self) -> [f64; 3] {
        [self.delta1, self.delta2, self.delta3]
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.rel, self.rms, self.log10, self.delta1, self.delta2, self.delta3, self.pixel_count
        )
    }
}

/// `key=value` lines.
impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rel={}", self.rel)?;
        writeln!(f, "rms={}", self.rms)?;
        writeln!(f, "log10={}", self.log10)?;
        writeln!(f, "delta1={}", self.delta1)?;
        writeln!(f, "delta2={}", self.delta2)?;
        writeln!(f, "delta3={}", self.delta3)?;
        writeln!(f, "pixel_count={}", self.pixel_count)
    }
}

/// How per-sample results combine into one report.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Aggregation {
    /// Every valid pixel of every sample weighs the same.
    #[default]
    Pixel,
    /// Each sample's report weighs the same.
    Image,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel" => Ok(Self::Pixel),
            "image" => Ok(Self::Image),
            _ => Err(Error::config(format!("aggregation must be pixel or image, got {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Sums {
    abs_rel: f64,
    sq: f64,
    log10: f64,
    within: [u64; 3],
    n: u64,
}

impl Sums {
    fn report(&self) -> MetricsReport {
        let n = self.n as f64;
        MetricsReport {
            rel: self.abs_rel / n,
            rms: (self.sq / n).sqrt(),
            log10: self.log10 / n,
            delta1: self.within[0] as f64 / n,
            delta2: self.within[1] as f64 / n,
            delta3: self.within[2] as f64 / n,
            pixel_count: self.n,
        }
    }
}

/// Sample-by-sample accumulation in a fixed order.
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    aggregation: Aggregation,
    total: Sums,
    per_image: Vec<MetricsReport>,
}

impl MetricsAccumulator {
    pub fn new(aggregation: Aggregation) -> Self {
        Self {
            aggregation,
            ..Self::default()
        }
    }

    /// Adds one prediction. `pred` may be `[H', W']`, `[1, H', W']`, or
    /// `[1, 1, H', W']`; it is bilinearly resized when `H'×W'` differs from
    /// `truth`'s `[H, W]`.
    pub fn add<T: Real>(&mut self, pred: &Tensor<T>, truth: &Tensor<T>, mask: &[bool]) -> Result<MetricsReport> {
        let [h, w] = *truth.dims() else {
            return Err(Error::shape(format!("truth must be [H, W], got {:?}", truth.dims())));
        };
        if mask.len() != h * w {
            return Err(Error::shape(format!(
                "mask has {} entries for a {h}x{w} map",
                mask.len()
            )));
        }
        let (ph, pw) = match *pred.dims() {
            [ph, pw] | [1, ph, pw] | [1, 1, ph, pw] => (ph, pw),
            _ => {
                return Err(Error::shape(format!(
                    "prediction must be a single map, got {:?}",
                    pred.dims()
                )))
            }
        };
        let pred = if (ph, pw) == (h, w) {
            pred.clone()
        } else {
            ops::resize_bilinear(&pred.clone().reshape([1, 1, ph, pw])?, h, w)?
        };
        let mut s = Sums::default();
        for ((&p, &t), _) in pred.data().iter().zip(truth.data()).zip(mask).filter(|(_, &m)| m) {
            let (p, t) = (p.to_f64_lossless(), t.to_f64_lossless());
            if !(t > 0.0 && p > 0.0) {
                return Err(Error::data(format!(
                    "non-positive depth on a valid pixel (pred {p}, truth {t})"
                )));
            }
            s.abs_rel += (t - p).abs() / t;
            s.sq += (t - p) * (t - p);
            s.log10 += (t.log10() - p.log10()).abs();
            let ratio = (t / p).max(p / t);
            for (k, th) in THRESHOLDS.iter().enumerate() {
                s.within[k] += (ratio < *th) as u64;
            }
            s.n += 1;
        }
        if s.n == 0 {
            return Err(Error::data("no valid pixels"));
        }
        let report = s.report();
        self.total.abs_rel += s.abs_rel;
        self.total.sq += s.sq;
        self.total.log10 += s.log10;
        for k in 0..3 {
            self.total.within[k] += s.within[k];
        }
        self.total.n += s.n;
        self.per_image.push(report);
        Ok(report)
    }

    pub fn finish(&self) -> Result<MetricsReport> {
        if self.per_image.is_empty() {
            return Err(Error::data("no samples evaluated"));
        }
        Ok(match self.aggregation {
            Aggregation::Pixel => self.total.report(),
            Aggregation::Image => {
                let n = self.per_image.len() as f64;
                let mean = |f: fn(&MetricsReport) -> f64| self.per_image.iter().map(f).sum::<f64>() / n;
                MetricsReport {
                    rel: mean(|r| r.rel),
                    rms: mean(|r| r.rms),
                    log10: mean(|r| r.log10),
                    delta1: mean(|r| r.delta1),
                    delta2: mean(|r| r.delta2),
                    delta3: mean(|r| r.delta3),
                    pixel_count: self.total.n,
                }
            }
        })
    }
}

pub fn compute_metrics<T: Real>(pred: &Tensor<T>, truth: &Tensor<T>, mask: &[bool]) -> Result<MetricsReport> {
    MetricsAccumulator::new(Aggregation::Pixel).add(pred, truth, mask)
}

/// Predicts every sample in order and aggregates the metrics.
pub fn evaluate_dataset(
    net: &Network,
    store: &ParamStore<f32>,
    dataset: &[RgbdSample],
    aggregation: Aggregation,
) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::new(aggregation);
    for s in dataset {
        let tag = |e: Error| Error::data(format!("sample {}: {e}", s.id));
        let pred = net.predict(store, &s.rgb.to_tensor(), false).map_err(tag)?;
        acc.add(&pred, &s.depth, &s.mask).map_err(tag)?;
    }
    acc.finish()
}
