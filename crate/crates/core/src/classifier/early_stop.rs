/// Patience-based early stopping on a maximized metric.
///
/// Only strict improvements reset the counter, so on ties the earliest epoch
/// stays best.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    Improved,
    NoImprovement,
    /// `patience` epochs have passed without improvement.
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> EarlyStopping {
        assert!(patience >= 1, "patience must be >= 1");
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> Observation {
        match self.best {
            Some((_, best)) if value <= best => {
                self.since_best += 1;
                if self.since_best >= self.patience {
                    Observation::Stop
                } else {
                    Observation::NoImprovement
                }
            }
            _ => {
                self.best = Some((epoch, value));
                self.since_best = 0;
                Observation::Improved
            }
        }
    }

    /// `(epoch, value)` of the best observation so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(seq: &[f64], patience: usize) -> (usize, usize) {
        let mut es = EarlyStopping::new(patience);
        for (i, &v) in seq.iter().enumerate() {
            if es.observe(i + 1, v) == Observation::Stop {
                return (i + 1, es.best().unwrap().0);
            }
        }
        (seq.len(), es.best().unwrap().0)
    }

    #[test]
    fn hand_trace() {
        let seq = [0.5, 0.7, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6];
        assert_eq!(run(&seq, 10), (12, 2));
    }

    #[test]
    fn ties_keep_earliest() {
        assert_eq!(run(&[0.4, 0.4, 0.4, 0.4], 3), (4, 1));
    }
}
