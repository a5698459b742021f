//! Loss-plateau detection.

use std::collections::VecDeque;

use crate::{Error, Result};

/// Declares convergence once the smoothed training loss stops improving.
///
/// Each new loss is folded into a trailing mean over the last `window` raw
/// values; the smoothed value enters a history ring of the same length. With a
/// full history, the run counts as converged when the relative change from the
/// oldest to the newest smoothed value is below `rel_tol` in magnitude. A rising
/// loss is therefore not a plateau.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceDetector {
    window: usize,
    rel_tol: f64,
    raw: VecDeque<f64>,
    history: VecDeque<f64>,
}

impl ConvergenceDetector {
    pub fn new(window: usize, rel_tol: f64) -> Result<Self> {
        if window < 2 {
            return Err(Error::config(format!(
                "convergence window must be >= 2, got {window}"
            )));
        }
        if !(rel_tol > 0.0 && rel_tol.is_finite()) {
            return Err(Error::config(format!(
                "convergence tolerance must be > 0, got {rel_tol}"
            )));
        }
        Ok(Self {
            window,
            rel_tol,
            raw: VecDeque::with_capacity(window),
            history: VecDeque::with_capacity(window),
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn rel_tol(&self) -> f64 {
        self.rel_tol
    }

    pub fn is_full(&self) -> bool {
        self.history.len() == self.window
    }

    pub fn history(&self) -> impl Iterator<Item = f64> + '_ {
        self.history.iter().copied()
    }

    pub fn reset(&mut self) {
        self.raw.clear();
        self.history.clear();
    }

    /// Pushes a new raw loss and reports whether the plateau condition holds.
    pub fn push(&mut self, loss: f64) -> Result<bool> {
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss}")));
        }
        if self.raw.len() == self.window {
            self.raw.pop_front();
        }
        self.raw.push_back(loss);
        let smoothed = self.raw.iter().sum::<f64>() / self.raw.len() as f64;
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(smoothed);
        Ok(self.plateaued())
    }

    fn plateaued(&self) -> bool {
        if !self.is_full() {
            return false;
        }
        let oldest = self.history[0];
        let newest = self.history[self.window - 1];
        relative_drop(oldest, newest).abs() < self.rel_tol
    }
}

/// `(oldest - newest) / max(oldest, 1e-12)`.
pub fn relative_drop(oldest: f64, newest: f64) -> f64 {
    (oldest - newest) / oldest.max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_history_converges() {
        let mut d = ConvergenceDetector::new(5, 1e-3).unwrap();
        let fired: Vec<bool> = (0..5).map(|_| d.push(1.0).unwrap()).collect();
        assert_eq!(fired, vec![false, false, false, false, true]);
        assert_eq!(d.history().collect::<Vec<_>>(), vec![1.0; 5]);
    }

    #[test]
    fn steady_decline_does_not_converge() {
        let mut d = ConvergenceDetector::new(5, 1e-3).unwrap();
        let mut last = true;
        for loss in [1.0, 0.8, 0.6, 0.4, 0.2] {
            last = d.push(loss).unwrap();
        }
        assert!(d.is_full());
        assert!(!last);
        assert!(relative_drop(1.0, 0.2) >= 1e-3);
    }

    #[test]
    fn rising_loss_does_not_converge() {
        let mut d = ConvergenceDetector::new(5, 1e-3).unwrap();
        let mut last = true;
        for loss in [0.2, 0.4, 0.6, 0.8, 1.0] {
            last = d.push(loss).unwrap();
        }
        assert!(!last);
        let mut d = ConvergenceDetector::new(5, 1e-3).unwrap();
        for loss in [1.0, 1.0, 1.0, 1.0, 1.0005] {
            last = d.push(loss).unwrap();
        }
        assert!(last);
    }

    #[test]
    fn reset_empties_history() {
        let mut d = ConvergenceDetector::new(3, 1e-3).unwrap();
        for _ in 0..3 {
            d.push(1.0).unwrap();
        }
        d.reset();
        assert!(!d.is_full());
        assert!(!d.push(1.0).unwrap());
    }

    #[test]
    fn rejects_non_finite_and_bad_config() {
        let mut d = ConvergenceDetector::new(5, 1e-3).unwrap();
        assert!(matches!(d.push(f64::NAN), Err(Error::Numeric(_))));
        assert!(ConvergenceDetector::new(1, 1e-3).is_err());
        assert!(ConvergenceDetector::new(5, 0.0).is_err());
    }
}
