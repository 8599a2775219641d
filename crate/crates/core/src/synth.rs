//! Synthetic households with known per-appliance ground truth.
//!
//! The aggregate is the sum of every appliance trace plus an unknown load
//! and Gaussian noise, floored at zero. Each appliance alternates between
//! its standby level (off) and one or more on levels according to a duty
//! model. Randomness for appliance `i` comes from ChaCha stream `i`, so
//! adding an appliance never perturbs the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::channel::ChannelSeries;
use crate::dataset::labels::DEFAULT_THRESHOLD_WATTS;
use crate::error::{config_err, Result};

const UNKNOWN_STREAM: u64 = u64::MAX - 1;
const NOISE_STREAM: u64 = u64::MAX;

/// One stage of a multi-phase program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub seconds: f64,
    pub watts: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DutyModel {
    /// Alternating on/off cycles starting at a random phase.
    Cyclic {
        on_watts: f64,
        on_seconds: f64,
        off_seconds: f64,
    },
    /// Short events arriving as a Poisson process.
    Burst {
        on_watts: f64,
        rate_per_hour: f64,
        seconds: f64,
    },
    /// A fixed sequence of phases, run `runs_per_day` times a day, each run
    /// starting at a random time within its share of the day.
    Program { phases: Vec<Phase>, runs_per_day: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApplianceSpec {
    pub name: String,
    pub standby_watts: f64,
    pub duty: DutyModel,
    /// Durations are scaled by a uniform factor in `1 ± duration_jitter`.
    pub duration_jitter: f64,
    /// On levels are scaled per activation by a uniform factor in
    /// `1 ± level_jitter`.
    pub level_jitter: f64,
}

/// Random walk `u[t+1] = clip(u[t] + N(0, step_sigma^2), 0, max_watts)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnknownLoad {
    pub start_watts: f64,
    pub step_sigma: f64,
    pub max_watts: f64,
}

impl UnknownLoad {
    pub fn none() -> Self {
        UnknownLoad {
            start_watts: 0.0,
            step_sigma: 0.0,
            max_watts: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HouseholdSpec {
    pub appliances: Vec<ApplianceSpec>,
    pub unknown: UnknownLoad,
    pub noise_sigma: f64,
    pub duration_seconds: f64,
    pub sample_period: f64,
    pub seed: u64,
    pub start_time: f64,
}

/// Generated traces, all on the same time grid, in watts.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthHousehold {
    pub aggregate: ChannelSeries,
    pub appliances: Vec<(String, ChannelSeries)>,
    /// The unknown load as realized in the aggregate.
    pub unknown: Vec<f64>,
}

impl ApplianceSpec {
    fn validate(&self) -> Result<()> {
        let name = &self.name;
        if name.is_empty() || name.contains(|c: char| c == '/' || c == '\\' || c.is_whitespace()) {
            return Err(config_err!("appliance name {name:?} must be a non-empty word"));
        }
        if !(self.standby_watts >= 0.0 && self.standby_watts.is_finite()) {
            return Err(config_err!("{name}: standby must be a non-negative number of watts"));
        }
        if !(0.0..1.0).contains(&self.duration_jitter) || !(0.0..1.0).contains(&self.level_jitter) {
            return Err(config_err!("{name}: jitter fractions must lie in [0, 1)"));
        }
        // the lowest jittered on level must still read as "on"
        let floor = DEFAULT_THRESHOLD_WATTS / (1.0 - self.level_jitter);
        let check_level = |w: f64| -> Result<()> {
            if !(w > floor && w.is_finite()) {
                return Err(config_err!("{name}: on level {w} W must exceed {floor:.3} W"));
            }
            Ok(())
        };
        let check_duration = |d: f64| -> Result<()> {
            if !(d > 0.0 && d.is_finite()) {
                return Err(config_err!("{name}: durations must be positive"));
            }
            Ok(())
        };
        match &self.duty {
            DutyModel::Cyclic {
                on_watts,
                on_seconds,
                off_seconds,
            } => {
                check_level(*on_watts)?;
                check_duration(*on_seconds)?;
                check_duration(*off_seconds)?;
            }
            DutyModel::Burst {
                on_watts,
                rate_per_hour,
                seconds,
            } => {
                check_level(*on_watts)?;
                check_duration(*rate_per_hour)?;
                check_duration(*seconds)?;
            }
            DutyModel::Program { phases, runs_per_day } => {
                if phases.is_empty() || *runs_per_day == 0 {
                    return Err(config_err!("{name}: a program needs phases and at least one run a day"));
                }
                for p in phases {
                    check_level(p.watts)?;
                    check_duration(p.seconds)?;
                }
                let total: f64 = phases.iter().map(|p| p.seconds).sum::<f64>() * (1.0 + self.duration_jitter);
                if total > 86_400.0 / *runs_per_day as f64 {
                    return Err(config_err!("{name}: program runs do not fit in a day"));
                }
            }
        }
        Ok(())
    }
}

impl HouseholdSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_period > 0.0 && self.sample_period.is_finite()) {
            return Err(config_err!("sample period must be positive"));
        }
        if !(self.duration_seconds >= self.sample_period && self.duration_seconds.is_finite()) {
            return Err(config_err!("duration must cover at least one sample"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(config_err!("noise sigma must be non-negative"));
        }
        let u = &self.unknown;
        if !(u.max_watts >= 0.0 && u.step_sigma >= 0.0 && (0.0..=u.max_watts).contains(&u.start_watts)) {
            return Err(config_err!("unknown load needs 0 <= start <= max and step sigma >= 0"));
        }
        for (i, a) in self.appliances.iter().enumerate() {
            a.validate()?;
            if self.appliances[..i].iter().any(|b| b.name == a.name) {
                return Err(config_err!("duplicate appliance name {:?}", a.name));
            }
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_seconds / self.sample_period).round() as usize
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn jitter<R: Rng>(rng: &mut R, value: f64, fraction: f64) -> f64 {
    if fraction == 0.0 {
        value
    } else {
        value * rng.random_range(1.0 - fraction..1.0 + fraction)
    }
}

/// Whole samples covering `seconds`, at least one.
fn samples_for(seconds: f64, period: f64) -> usize {
    ((seconds / period).round() as usize).max(1)
}

fn fill(trace: &mut [f64], start: usize, len: usize, watts: f64) {
    let end = (start + len).min(trace.len());
    if start < end {
        trace[start..end].fill(watts);
    }
}

fn appliance_trace(spec: &ApplianceSpec, n: usize, period: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut trace = vec![spec.standby_watts; n];
    let dj = spec.duration_jitter;
    let lj = spec.level_jitter;
    match &spec.duty {
        DutyModel::Cyclic {
            on_watts,
            on_seconds,
            off_seconds,
        } => {
            let mut t = 0;
            let mut on = rng.random_bool(on_seconds / (on_seconds + off_seconds));
            // start part-way through the first state
            let first = if on { *on_seconds } else { *off_seconds };
            let mut remaining = samples_for(jitter(rng, first, dj) * rng.random::<f64>(), period);
            while t < n {
                if on {
                    fill(&mut trace, t, remaining, jitter(rng, *on_watts, lj));
                }
                t += remaining;
                on = !on;
                let next = if on { *on_seconds } else { *off_seconds };
                remaining = samples_for(jitter(rng, next, dj), period);
            }
        }
        DutyModel::Burst {
            on_watts,
            rate_per_hour,
            seconds,
        } => {
            let gap = Exp::new(rate_per_hour / 3600.0).expect("validated positive rate");
            let mut time = gap.sample(rng);
            loop {
                let t = (time / period) as usize;
                if t >= n {
                    break;
                }
                let len = samples_for(jitter(rng, *seconds, dj), period);
                fill(&mut trace, t, len, jitter(rng, *on_watts, lj));
                time = (t + len) as f64 * period + gap.sample(rng);
            }
        }
        DutyModel::Program { phases, runs_per_day } => {
            let slot = 86_400.0 / *runs_per_day as f64;
            let mut slot_start = 0.0;
            while ((slot_start / period) as usize) < n {
                let lens: Vec<usize> = phases
                    .iter()
                    .map(|p| samples_for(jitter(rng, p.seconds, dj), period))
                    .collect();
                let run_seconds = lens.iter().sum::<usize>() as f64 * period;
                let offset = rng.random_range(0.0..(slot - run_seconds).max(period));
                let level = jitter(rng, 1.0, lj);
                let mut t = ((slot_start + offset) / period) as usize;
                for (p, len) in phases.iter().zip(lens) {
                    fill(&mut trace, t, len, p.watts * level);
                    t += len;
                }
                slot_start += slot;
            }
        }
    }
    trace
}

fn unknown_trace(spec: &UnknownLoad, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut u = spec.start_watts;
    let step = Normal::new(0.0, spec.step_sigma).expect("validated sigma");
    (0..n)
        .map(|_| {
            let current = u;
            u = (u + step.sample(rng)).clamp(0.0, spec.max_watts);
            current
        })
        .collect()
}

/// Generates every trace of `spec`. Same spec, same bits.
pub fn generate(spec: &HouseholdSpec) -> Result<SynthHousehold> {
    spec.validate()?;
    let n = spec.num_samples();
    let period = spec.sample_period;
    let traces: Vec<Vec<f64>> = spec
        .appliances
        .iter()
        .enumerate()
        .map(|(i, a)| appliance_trace(a, n, period, &mut stream(spec.seed, i as u64)))
        .collect();
    let unknown = unknown_trace(&spec.unknown, n, &mut stream(spec.seed, UNKNOWN_STREAM));
    let mut noise_rng = stream(spec.seed, NOISE_STREAM);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");

    let mut aggregate = Vec::with_capacity(n);
    let mut realized = Vec::with_capacity(n);
    for t in 0..n {
        let appliances: f64 = traces.iter().map(|tr| tr[t]).sum();
        let clean = appliances + unknown[t];
        // realized unknown load, so aggregate - appliances - unknown is exactly 0 without noise
        realized.push(clean - appliances);
        let eps = if spec.noise_sigma > 0.0 {
            noise.sample(&mut noise_rng)
        } else {
            0.0
        };
        aggregate.push((clean + eps).max(0.0));
    }

    let series = |v: Vec<f64>| ChannelSeries::from_values(period, spec.start_time, v);
    Ok(SynthHousehold {
        aggregate: series(aggregate)?,
        appliances: spec
            .appliances
            .iter()
            .zip(traces)
            .map(|(a, tr)| Ok((a.name.clone(), series(tr)?)))
            .collect::<Result<_>>()?,
        unknown: realized,
    })
}

/// Fridge, kettle and dish washer over three days at a 36 s period.
pub fn default_household() -> HouseholdSpec {
    HouseholdSpec {
        appliances: vec![
            ApplianceSpec {
                name: "fridge".into(),
                standby_watts: 3.02,
                duty: DutyModel::Cyclic {
                    on_watts: 90.0,
                    on_seconds: 20.0 * 60.0,
                    off_seconds: 30.0 * 60.0,
                },
                duration_jitter: 0.2,
                level_jitter: 0.1,
            },
            ApplianceSpec {
                name: "kettle".into(),
                standby_watts: 1.10,
                duty: DutyModel::Burst {
                    on_watts: 2000.0,
                    rate_per_hour: 0.25,
                    seconds: 3.0 * 60.0,
                },
                duration_jitter: 0.2,
                level_jitter: 0.05,
            },
            ApplianceSpec {
                name: "dish_washer".into(),
                standby_watts: 0.61,
                duty: DutyModel::Program {
                    phases: vec![
                        Phase {
                            seconds: 20.0 * 60.0,
                            watts: 2000.0,
                        },
                        Phase {
                            seconds: 40.0 * 60.0,
                            watts: 120.0,
                        },
                        Phase {
                            seconds: 15.0 * 60.0,
                            watts: 2000.0,
                        },
                        Phase {
                            seconds: 20.0 * 60.0,
                            watts: 60.0,
                        },
                    ],
                    runs_per_day: 1,
                },
                duration_jitter: 0.2,
                level_jitter: 0.05,
            },
        ],
        unknown: UnknownLoad {
            start_watts: 40.0,
            step_sigma: 2.0,
            max_watts: 100.0,
        },
        noise_sigma: 2.0,
        duration_seconds: 3.0 * 86_400.0,
        sample_period: 36.0,
        seed: 0,
        start_time: 1_600_000_000.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(mut spec: HouseholdSpec) -> HouseholdSpec {
        spec.noise_sigma = 0.0;
        spec
    }

    fn on_fraction(h: &SynthHousehold, name: &str) -> f64 {
        let (_, s) = h.appliances.iter().find(|(n, _)| n == name).unwrap();
        let v = s.values().unwrap();
        v.iter().filter(|&&w| w > DEFAULT_THRESHOLD_WATTS).count() as f64 / v.len() as f64
    }

    #[test]
    fn empty_household_is_silent() {
        let spec = HouseholdSpec {
            appliances: vec![],
            unknown: UnknownLoad::none(),
            noise_sigma: 0.0,
            duration_seconds: 3600.0,
            sample_period: 6.0,
            seed: 1,
            start_time: 0.0,
        };
        let h = generate(&spec).unwrap();
        assert_eq!(h.aggregate.len(), 600);
        assert!(h.aggregate.values().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn off_state_is_exact_standby() {
        let mut spec = default_household();
        spec.appliances.truncate(1);
        let h = generate(&spec).unwrap();
        let v = h.appliances[0].1.values().unwrap();
        let off: Vec<f64> = v.iter().copied().filter(|&w| w <= DEFAULT_THRESHOLD_WATTS).collect();
        assert!(!off.is_empty());
        assert!(off.iter().all(|&w| w == 3.02));
        assert!(v.iter().all(|&w| w == 3.02 || w > DEFAULT_THRESHOLD_WATTS));
    }

    #[test]
    fn conservation_without_noise() {
        let h = generate(&quiet(default_household())).unwrap();
        let agg = h.aggregate.values().unwrap();
        let traces: Vec<Vec<f64>> = h.appliances.iter().map(|(_, s)| s.values().unwrap()).collect();
        for t in 0..agg.len() {
            let sum: f64 = traces.iter().map(|tr| tr[t]).sum();
            assert_eq!(agg[t] - sum - h.unknown[t], 0.0);
            assert!(h.unknown[t] >= 0.0 && h.unknown[t] <= 100.0 + 1e-9);
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let a = generate(&default_household()).unwrap();
        let b = generate(&default_household()).unwrap();
        assert_eq!(a, b);
        let mut other = default_household();
        other.seed = 1;
        assert_ne!(generate(&other).unwrap().aggregate, a.aggregate);
    }

    #[test]
    fn default_duty_shapes() {
        assert_eq!(default_household().appliances.len(), 3);
        for seed in 0..5 {
            let mut spec = default_household();
            spec.seed = seed;
            let h = generate(&spec).unwrap();
            assert!(on_fraction(&h, "kettle") < 0.05, "seed {seed}");
            let fridge = on_fraction(&h, "fridge");
            assert!((0.3..=0.7).contains(&fridge), "seed {seed}: {fridge}");
            assert!(on_fraction(&h, "dish_washer") > 0.0);
        }
    }

    #[test]
    fn program_runs_every_day() {
        let h = generate(&default_household()).unwrap();
        let (_, dw) = &h.appliances[2];
        let v = dw.values().unwrap();
        for day in v.chunks(2400) {
            assert!(day.iter().any(|&w| w > 1000.0));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = default_household();
        spec.appliances[0].standby_watts = -1.0;
        assert!(generate(&spec).is_err());
        let mut spec = default_household();
        spec.duration_seconds = 0.0;
        assert!(generate(&spec).is_err());
        let mut spec = default_household();
        spec.appliances[1].duty = DutyModel::Burst {
            on_watts: 10.0,
            rate_per_hour: 1.0,
            seconds: 60.0,
        };
        assert!(generate(&spec).is_err());
    }
}
