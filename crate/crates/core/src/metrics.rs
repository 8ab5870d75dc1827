//! Episode metrics: travel time, throughput, queue, delay, accumulated
//! waiting, and CO2.

use serde::{Deserialize, Serialize};

use crate::dynamics::World;
use crate::error::{Error, Result};

const SHIPPED_COEFFS: &str = include_str!("../data/co2_coeffs.toml");

/// Polynomial CO2 model in speed and acceleration, mg/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionCoeffs {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
}

impl EmissionCoeffs {
    pub fn parse(text: &str) -> Result<EmissionCoeffs> {
        let c: EmissionCoeffs = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if !(c.c0 >= 0.0) {
            return Err(Error::Config("idle emission c0 must be non-negative".into()));
        }
        Ok(c)
    }
}

impl Default for EmissionCoeffs {
    fn default() -> Self {
        EmissionCoeffs::parse(SHIPPED_COEFFS).expect("shipped coefficient file is valid")
    }
}

pub fn co2_rate(v: f64, a: f64, c: &EmissionCoeffs) -> f64 {
    let v = v.max(0.0);
    (c.c0 + c.c1 * v * a + c.c2 * v * a * a + c.c3 * v + c.c4 * v * v + c.c5 * v * v * v).max(0.0)
}

/// `1 - Σv / (n·v_max)` with speeds clamped to `[0, v_max]`; 0 for no vehicles.
pub fn delay(speeds: &[f64], v_max: f64) -> f64 {
    if speeds.is_empty() || !(v_max > 0.0) {
        return 0.0;
    }
    let sum: f64 = speeds.iter().map(|v| v.clamp(0.0, v_max)).sum();
    (1.0 - sum / (speeds.len() as f64 * v_max)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// s, completed trips only
    pub avg_travel_time: f64,
    pub throughput_per_hour: f64,
    /// vehicles, time average of the summed incoming-lane queues
    pub mean_queue: f64,
    pub mean_delay: f64,
    /// s, time average of the windowed waiting sum
    pub mean_accumulated_waiting: f64,
    /// g/s
    pub co2_rate: f64,
    pub completed: u64,
    pub unfinished: u64,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 8] = [
        "avg_travel_time",
        "throughput_per_hour",
        "mean_queue",
        "mean_delay",
        "mean_accumulated_waiting",
        "co2_rate",
        "completed",
        "unfinished",
    ];

    /// The six headline metrics in table order.
    pub const HEADLINE: [&'static str; 6] = [
        "avg_travel_time",
        "throughput_per_hour",
        "mean_delay",
        "mean_accumulated_waiting",
        "mean_queue",
        "co2_rate",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.avg_travel_time,
            self.throughput_per_hour,
            self.mean_queue,
            self.mean_delay,
            self.mean_accumulated_waiting,
            self.co2_rate,
            self.completed as f64,
            self.unfinished as f64,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::COLUMNS
            .iter()
            .position(|c| *c == name)
            .map(|i| self.values()[i])
    }
}

/// Per-episode accumulator fed once per physics step.
#[derive(Debug, Clone)]
pub struct MetricsRecorder {
    coeffs: EmissionCoeffs,
    samples: u64,
    queue_sum: u64,
    delay_sum: f64,
    waiting_sum_ms: u128,
    co2_total_mg: f64,
    completed: u64,
    travel_sum_ms: u64,
    delay_out_of_range: u64,
    speeds: Vec<f64>,
}

impl MetricsRecorder {
    pub fn new(coeffs: EmissionCoeffs) -> MetricsRecorder {
        MetricsRecorder {
            coeffs,
            samples: 0,
            queue_sum: 0,
            delay_sum: 0.0,
            waiting_sum_ms: 0,
            co2_total_mg: 0.0,
            completed: 0,
            travel_sum_ms: 0,
            delay_out_of_range: 0,
            speeds: Vec::new(),
        }
    }

    pub fn clear(&mut self) {
        *self = MetricsRecorder::new(self.coeffs);
    }

    pub fn coeffs(&self) -> &EmissionCoeffs {
        &self.coeffs
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    /// Steps whose delay sample fell outside [0, 1]. Always zero unless the
    /// delay computation is broken.
    pub fn delay_out_of_range(&self) -> u64 {
        self.delay_out_of_range
    }

    /// Records one physics step that just finished in `world`.
    pub fn record_step(&mut self, world: &World) {
        let spec = world.spec();
        let dt = world.dt_ms() as f64 / 1000.0;
        self.samples += 1;
        self.queue_sum += world.total_incoming_queue() as u64;

        self.speeds.clear();
        for &lane in spec.incoming_lanes() {
            self.speeds
                .extend(world.segment(crate::dynamics::SegmentRef::Lane(lane)).iter().map(|v| v.speed));
        }
        let d = delay(&self.speeds, spec.max_incoming_speed());
        if !(0.0..=1.0).contains(&d) {
            self.delay_out_of_range += 1;
        }
        self.delay_sum += d;

        self.waiting_sum_ms += world.windowed_waiting_ms() as u128;

        for (_, v) in world.vehicles() {
            self.co2_total_mg += co2_rate(v.speed, v.accel, &self.coeffs) * dt;
        }
        for v in world.completed_last_step() {
            self.co2_total_mg += co2_rate(v.speed, v.accel, &self.coeffs) * dt;
            self.completed += 1;
            self.travel_sum_ms += v.arrive_ms.expect("completed vehicles have arrived") - v.depart_ms;
        }
    }

    pub fn finalize(&self, world: &World, duration_ms: u64) -> Result<MetricsReport> {
        if world.time_ms() < duration_ms || duration_ms == 0 {
            return Err(Error::EpisodeNotComplete);
        }
        let c = world.counters();
        let duration_s = duration_ms as f64 / 1000.0;
        let n = self.samples.max(1) as f64;
        let avg_travel_time = if self.completed > 0 {
            self.travel_sum_ms as f64 / 1000.0 / self.completed as f64
        } else {
            0.0
        };
        Ok(MetricsReport {
            avg_travel_time,
            throughput_per_hour: self.completed as f64 * 3600.0 / duration_s,
            mean_queue: self.queue_sum as f64 / n,
            mean_delay: self.delay_sum / n,
            mean_accumulated_waiting: self.waiting_sum_ms as f64 / 1000.0 / n,
            co2_rate: self.co2_total_mg / 1000.0 / duration_s,
            completed: self.completed,
            unfinished: c.in_network + c.pending,
        })
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Column-wise mean and standard deviation over several reports.
pub fn aggregate(reports: &[MetricsReport]) -> ([f64; 8], [f64; 8]) {
    let mut mean = [0.0; 8];
    let mut std = [0.0; 8];
    for k in 0..8 {
        let col: Vec<f64> = reports.iter().map(|r| r.values()[k]).collect();
        let (m, s) = mean_std(&col);
        mean[k] = m;
        std[k] = s;
    }
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delay_all_stopped() {
        assert_eq!(delay(&[0.0, 0.0], 13.89), 1.0);
    }

    #[test]
    fn delay_all_at_limit() {
        assert_eq!(delay(&[13.89, 13.89], 13.89), 0.0);
    }

    #[test]
    fn delay_mixed() {
        // 1 - (5 + 10 + 15 + 20) / (4 * 20)
        assert!((delay(&[5.0, 10.0, 15.0, 20.0], 20.0) - 0.375).abs() < 1e-15);
    }

    #[test]
    fn delay_empty_and_clamped() {
        assert_eq!(delay(&[], 13.89), 0.0);
        assert_eq!(delay(&[30.0], 10.0), 0.0);
    }

    #[test]
    fn co2_idle() {
        let c = EmissionCoeffs::default();
        assert_eq!(co2_rate(0.0, 0.0, &c), c.c0);
    }

    #[test]
    fn co2_clamped_at_zero() {
        let c = EmissionCoeffs { c0: 100.0, c1: 500.0, c2: 0.0, c3: 0.0, c4: 0.0, c5: 0.0 };
        assert_eq!(co2_rate(10.0, -4.5, &c), 0.0);
    }

    #[test]
    fn co2_shipped_coefficients() {
        // 600 + 435·10·1 + 10·10·1 + 64·10 + 0.5·100 + 0.13·1000, evaluated independently
        let c = EmissionCoeffs::default();
        assert!((co2_rate(10.0, 1.0, &c) - 5870.0).abs() < 1e-9);
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert_eq!(s, 2.0);
    }
}
