//! Affine satellite-to-ground downlink model.
//!
//! Sending `n > 0` images costs a fixed session overhead `a` plus a per-image
//! cost `b`, each optionally perturbed by Gaussian jitter (clamped so a single
//! image never takes negative time). Time is accumulated on an integer
//! nanosecond clock, so with zero jitter `total = a + n·b` holds exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

const NS_PER_S: f64 = 1e9;

fn to_ns(seconds: f64) -> u64 {
    (seconds.max(0.0) * NS_PER_S).round() as u64
}

fn to_s(ns: u64) -> f64 {
    ns as f64 / NS_PER_S
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    /// Fixed per-session overhead `a`, seconds.
    pub base_latency_s: f64,
    /// Marginal cost `b`, seconds per image.
    pub per_image_s: f64,
    /// Standard deviation of per-image jitter, seconds.
    pub jitter_std_s: f64,
    pub seed: u64,
}

impl LinkParams {
    pub fn new(base_latency_s: f64, per_image_s: f64) -> Result<Self> {
        let p = Self { base_latency_s, per_image_s, jitter_std_s: 0.0, seed: 0 };
        p.validate()?;
        Ok(p)
    }

    pub fn with_jitter(mut self, jitter_std_s: f64, seed: u64) -> Result<Self> {
        self.jitter_std_s = jitter_std_s;
        self.seed = seed;
        self.validate()?;
        Ok(self)
    }

    /// Per-image cost from payload size and bandwidth:
    /// `b = bytes / bandwidth + overhead`.
    pub fn per_image_from_bandwidth(bytes_per_image: f64, bandwidth_bytes_per_s: f64, overhead_s: f64) -> Result<f64> {
        if !(bytes_per_image > 0.0 && bandwidth_bytes_per_s > 0.0 && overhead_s >= 0.0) {
            return Err(Error::InvalidArgument("payload and bandwidth must be positive, overhead non-negative".into()));
        }
        Ok(bytes_per_image / bandwidth_bytes_per_s + overhead_s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.base_latency_s >= 0.0
            && self.per_image_s > 0.0
            && self.jitter_std_s >= 0.0
            && self.base_latency_s.is_finite()
            && self.per_image_s.is_finite()
            && self.jitter_std_s.is_finite();
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "link needs a >= 0, b > 0, jitter >= 0 (got a={}, b={}, jitter={})",
                self.base_latency_s, self.per_image_s, self.jitter_std_s
            )));
        }
        Ok(())
    }

    /// Deterministic cost of `n` images, ignoring jitter.
    pub fn expected_time_s(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.base_latency_s + n as f64 * self.per_image_s
        }
    }
}

/// Outcome of one downlink session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransmitRecord {
    pub images: usize,
    /// Completion time of each image since the session started, nanoseconds.
    pub completion_ns: Vec<u64>,
    pub total_ns: u64,
}

impl TransmitRecord {
    pub fn total_s(&self) -> f64 {
        to_s(self.total_ns)
    }

    pub fn completion_s(&self) -> impl Iterator<Item = f64> + '_ {
        self.completion_ns.iter().map(|&ns| to_s(ns))
    }
}

/// Send `n` images over the link. `n = 0` opens no session and takes no time.
pub fn transmit(n: usize, params: &LinkParams) -> TransmitRecord {
    if n == 0 {
        return TransmitRecord { images: 0, completion_ns: Vec::new(), total_ns: 0 };
    }
    let mut rng = (params.jitter_std_s > 0.0).then(|| Rng::new(params.seed, "jitter"));
    let base = to_ns(params.base_latency_s);
    let step = to_ns(params.per_image_s);
    let mut clock = base;
    let completion_ns = (0..n)
        .map(|_| {
            clock += match rng.as_mut() {
                None => step,
                Some(r) => to_ns(params.per_image_s + r.normal(0.0, params.jitter_std_s)),
            };
            clock
        })
        .collect();
    TransmitRecord { images: n, completion_ns, total_ns: clock }
}

/// Least-squares fit of `t = a + b·n` to `(n, seconds)` observations. Two
/// points with distinct `n` are interpolated exactly.
pub fn calibrate(points: &[(usize, f64)]) -> Result<LinkParams> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(format!("calibration needs at least 2 points, got {}", points.len())));
    }
    let k = points.len() as f64;
    let mean_n = points.iter().map(|&(n, _)| n as f64).sum::<f64>() / k;
    let mean_t = points.iter().map(|&(_, t)| t).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|&(n, _)| (n as f64 - mean_n).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("calibration points must not all share the same image count".into()));
    }
    let sxy: f64 = points.iter().map(|&(n, t)| (n as f64 - mean_n) * (t - mean_t)).sum();
    let b = sxy / sxx;
    let a = mean_t - b * mean_n;
    LinkParams::new(a, b)
}

/// Sum of squared residuals of `params` against `points`.
pub fn residual(params: &LinkParams, points: &[(usize, f64)]) -> f64 {
    points.iter().map(|&(n, t)| (params.expected_time_s(n) - t).powi(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rounded_link() -> LinkParams {
        LinkParams::new(0.1289, 0.0091216).unwrap()
    }

    #[test]
    fn no_images_no_session() {
        let r = transmit(0, &rounded_link());
        assert_eq!(r.total_ns, 0);
        assert!(r.completion_ns.is_empty());
    }

    #[test]
    fn reproduces_bent_pipe_and_msnet_times() {
        assert!((transmit(420, &rounded_link()).total_s() - 3.960).abs() < 5e-4);
        assert!((transmit(272, &rounded_link()).total_s() - 2.610).abs() < 5e-4);
    }

    #[test]
    fn zero_jitter_total_is_affine() {
        let p = rounded_link();
        let r = transmit(37, &p);
        assert_eq!(r.total_ns, to_ns(p.base_latency_s) + 37 * to_ns(p.per_image_s));
        assert_eq!(*r.completion_ns.last().unwrap(), r.total_ns);
        assert!(r.completion_ns.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn two_point_calibration() {
        let p = calibrate(&[(420, 3.96), (272, 2.61)]).unwrap();
        assert!((p.per_image_s - 1.35 / 148.0).abs() < 1e-15);
        assert!((p.base_latency_s - (3.96 - 420.0 * 1.35 / 148.0)).abs() < 1e-12);
        assert!((p.base_latency_s - 0.12889).abs() < 1e-4);
        assert!(residual(&p, &[(420, 3.96), (272, 2.61)]) < 1e-24);
    }

    #[test]
    fn calibration_on_a_line_has_zero_residual() {
        let pts: Vec<_> = (1..6).map(|n| (n * 10, 0.5 + 0.02 * (n * 10) as f64)).collect();
        let p = calibrate(&pts).unwrap();
        assert!(residual(&p, &pts) < 1e-24);
    }

    #[test]
    fn calibration_errors() {
        assert!(calibrate(&[(5, 1.0), (5, 2.0)]).is_err());
        assert!(calibrate(&[(5, 1.0)]).is_err());
    }

    #[test]
    fn rejects_bad_params() {
        assert!(LinkParams::new(-1.0, 0.1).is_err());
        assert!(LinkParams::new(0.0, 0.0).is_err());
        assert!(rounded_link().with_jitter(-0.1, 1).is_err());
    }

    #[test]
    fn bandwidth_form() {
        let b = LinkParams::per_image_from_bandwidth(196_608.0, 24_576_000.0, 0.001).unwrap();
        assert!((b - 0.009).abs() < 1e-15);
    }

    #[test]
    fn jitter_is_seeded_and_clamped() {
        let p = LinkParams::new(0.1, 0.001).unwrap().with_jitter(0.01, 9).unwrap();
        let a = transmit(200, &p);
        assert_eq!(a, transmit(200, &p));
        assert!(a.completion_ns.windows(2).all(|w| w[0] <= w[1]));
        let q = p.with_jitter(0.01, 10).unwrap();
        assert_ne!(a, transmit(200, &q));
    }
}
