//! Windowed SNR mean/variance estimation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelState;
use crate::error::{invalid, Error, Result};

/// Lower clamp applied to estimated variances.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Per-user linear SNR means and variances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrStats {
    means: Vec<f64>,
    variances: Vec<f64>,
    sample_count: usize,
}

impl SnrStats {
    pub fn new(means: Vec<f64>, variances: Vec<f64>, sample_count: usize) -> Result<Self> {
        if means.len() != variances.len() {
            return Err(Error::DimensionMismatch {
                expected: means.len(),
                got: variances.len(),
            });
        }
        if means.is_empty() {
            return Err(invalid("statistics need at least one user"));
        }
        if let Some(m) = means.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(invalid(format!("SNR mean must be positive and finite, got {m}")));
        }
        if let Some(v) = variances.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(invalid(format!("SNR variance must be >= 0 and finite, got {v}")));
        }
        Ok(Self {
            means,
            variances,
            sample_count,
        })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn num_users(&self) -> usize {
        self.means.len()
    }

    /// Statistics restricted to the listed users, in that order.
    pub fn subset(&self, users: &[usize]) -> Result<Self> {
        let mut means = Vec::with_capacity(users.len());
        let mut variances = Vec::with_capacity(users.len());
        for &u in users {
            if u >= self.means.len() {
                return Err(Error::UnknownUser(u));
            }
            means.push(self.means[u]);
            variances.push(self.variances[u]);
        }
        Self::new(means, variances, self.sample_count)
    }
}

/// Ring buffers holding the last `beta` SNR observations of each user.
#[derive(Clone, Debug, PartialEq)]
pub struct SnrWindow {
    beta: usize,
    buffers: Vec<VecDeque<f64>>,
}

impl SnrWindow {
    pub fn new(num_users: usize, beta: usize) -> Result<Self> {
        if beta < 2 {
            return Err(invalid(format!("window length must be >= 2, got {beta}")));
        }
        Ok(Self {
            beta,
            buffers: vec![VecDeque::with_capacity(beta); num_users],
        })
    }

    pub fn beta(&self) -> usize {
        self.beta
    }

    pub fn num_users(&self) -> usize {
        self.buffers.len()
    }

    /// Observations currently held for the user with the fewest.
    pub fn sample_count(&self) -> usize {
        self.buffers.iter().map(VecDeque::len).min().unwrap_or(0)
    }

    pub fn user_count(&self, user: usize) -> usize {
        self.buffers.get(user).map_or(0, VecDeque::len)
    }

    pub fn push_observation(&mut self, state: &ChannelState) -> Result<()> {
        if state.len() != self.buffers.len() {
            return Err(Error::DimensionMismatch {
                expected: self.buffers.len(),
                got: state.len(),
            });
        }
        for (buf, &s) in self.buffers.iter_mut().zip(state.snrs()) {
            push_bounded(buf, s, self.beta);
        }
        Ok(())
    }

    /// Push a single user's observation; used when users come and go.
    pub fn push_user(&mut self, user: usize, snr: f64) -> Result<()> {
        let beta = self.beta;
        let buf = self.buffers.get_mut(user).ok_or(Error::UnknownUser(user))?;
        push_bounded(buf, snr, beta);
        Ok(())
    }

    pub fn add_user(&mut self) -> usize {
        self.buffers.push(VecDeque::with_capacity(self.beta));
        self.buffers.len() - 1
    }

    pub fn remove_user(&mut self, user: usize) -> Result<()> {
        if user >= self.buffers.len() {
            return Err(Error::UnknownUser(user));
        }
        self.buffers.remove(user);
        Ok(())
    }

    /// Window average of `log2(1+φ)` for one user.
    pub fn mean_efficiency(&self, user: usize) -> Result<f64> {
        let buf = self.buffers.get(user).ok_or(Error::UnknownUser(user))?;
        if buf.is_empty() {
            return Err(Error::InsufficientData { have: 0, need: 1 });
        }
        Ok(buf.iter().map(|x| x.ln_1p()).sum::<f64>() / (buf.len() as f64 * std::f64::consts::LN_2))
    }

    pub fn estimate(&self) -> Result<SnrStats> {
        self.estimate_users(&(0..self.buffers.len()).collect::<Vec<_>>())
    }

    /// Plug-in mean and variance for the listed users.
    pub fn estimate_users(&self, users: &[usize]) -> Result<SnrStats> {
        let mut means = Vec::with_capacity(users.len());
        let mut variances = Vec::with_capacity(users.len());
        let mut count = usize::MAX;
        for &u in users {
            let buf = self.buffers.get(u).ok_or(Error::UnknownUser(u))?;
            if buf.len() < 2 {
                return Err(Error::InsufficientData {
                    have: buf.len(),
                    need: 2,
                });
            }
            let (m, v) = plug_in_moments(buf.iter().copied());
            means.push(m);
            variances.push(v.max(VARIANCE_FLOOR));
            count = count.min(buf.len());
        }
        SnrStats::new(means, variances, count)
    }
}

fn push_bounded(buf: &mut VecDeque<f64>, x: f64, beta: usize) {
    if buf.len() == beta {
        buf.pop_front();
    }
    buf.push_back(x);
}

/// Mean and biased (1/n) variance, two-pass.
pub fn plug_in_moments(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, sum) = xs.clone().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    let n = n as f64;
    let mean = sum / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}
