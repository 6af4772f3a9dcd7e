use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WatchdogConfig {
    pub ceiling: f64,
    /// Length of a strictly rising run that raises a flag; below 2 disables
    /// the trend check.
    pub window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Advisory {
    /// Index into the trace of the point that raised the flag.
    pub index: usize,
    pub reason: String,
}

/// Checks the last point of an entropy trace.
pub fn entropy_watchdog(trace: &[f64], cfg: &WatchdogConfig) -> Option<Advisory> {
    let (&last, _) = trace.split_last()?;
    let index = trace.len() - 1;
    if last > cfg.ceiling {
        return Some(Advisory {
            index,
            reason: format!("entropy {last:.4} above ceiling {:.4}", cfg.ceiling),
        });
    }
    if cfg.window >= 2 && trace.len() >= cfg.window {
        let tail = &trace[trace.len() - cfg.window..];
        if tail.windows(2).all(|w| w[1] > w[0]) {
            return Some(Advisory {
                index,
                reason: format!("entropy rose for {} consecutive iterations", cfg.window),
            });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: WatchdogConfig = WatchdogConfig { ceiling: 2.0, window: 4 };

    #[test]
    fn flat_trace_is_quiet() {
        assert_eq!(entropy_watchdog(&[1.0; 20], &CFG), None);
        assert_eq!(entropy_watchdog(&[], &CFG), None);
    }

    #[test]
    fn rising_trace_flags() {
        let t = [1.0, 0.9, 1.0, 1.1, 1.2, 1.3];
        assert_eq!(entropy_watchdog(&t, &CFG).unwrap().index, 5);
        assert_eq!(entropy_watchdog(&t[..4], &CFG), None);
    }

    #[test]
    fn ceiling_crossing_at_last_point() {
        let t = [1.5, 1.0, 1.9, 2.01];
        assert_eq!(entropy_watchdog(&t, &CFG).unwrap().index, 3);
        assert_eq!(entropy_watchdog(&t[..3], &CFG), None);
    }
}
