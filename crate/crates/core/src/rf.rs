//! RFID phase model: distance-to-phase mapping, reader ambiguity and unwrapping.
//!
//! Everything here works in degrees, the unit commodity readers report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 915 MHz UHF carrier wavelength in meters.
pub const DEFAULT_WAVELENGTH: f64 = 0.3263;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfParams {
    /// Carrier wavelength, meters.
    pub wavelength: f64,
    /// Range of reported phase in degrees: 180 for readers with the
    /// half-cycle hardware ambiguity, 360 otherwise.
    pub reader_modulus: f64,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams {
            wavelength: DEFAULT_WAVELENGTH,
            reader_modulus: 180.0,
        }
    }
}

impl RfParams {
    pub fn new(wavelength: f64, reader_modulus: f64) -> Result<Self> {
        let p = RfParams {
            wavelength,
            reader_modulus,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::input("wavelength must be positive"));
        }
        if self.reader_modulus != 180.0 && self.reader_modulus != 360.0 {
            return Err(Error::input(format!(
                "reader modulus must be 180 or 360 degrees, got {}",
                self.reader_modulus
            )));
        }
        Ok(())
    }

    /// Largest per-sample one-way distance change that unwraps unambiguously.
    pub fn max_unambiguous_step(&self) -> f64 {
        self.wavelength * self.reader_modulus / 1440.0
    }
}

/// Per-sample phase readings for one tag. `None` marks a missed read.
#[derive(Debug, Clone, PartialEq)]
pub struct TagTrack {
    pub epc: String,
    pub readings: Vec<Option<f64>>,
}

impl TagTrack {
    pub fn new(epc: impl Into<String>, readings: Vec<Option<f64>>) -> Self {
        TagTrack {
            epc: epc.into(),
            readings,
        }
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn present_count(&self) -> usize {
        self.readings.iter().filter(|r| r.is_some()).count()
    }

    pub fn validate(&self, params: &RfParams) -> Result<()> {
        for (t, r) in self.readings.iter().enumerate() {
            if let Some(phase) = r {
                if !(0.0..params.reader_modulus).contains(phase) {
                    return Err(Error::input(format!(
                        "tag {} sample {t}: phase {phase} outside [0, {})",
                        self.epc, params.reader_modulus
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Reader-reported phase for a one-way antenna-to-tag distance `d`.
pub fn phase_from_distance(d: f64, params: &RfParams) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::input(format!("distance must be non-negative, got {d}")));
    }
    Ok((2.0 * d / params.wavelength * 360.0).rem_euclid(params.reader_modulus))
}

/// Representative of `delta` modulo `modulus` in `(-modulus/2, modulus/2]`.
pub fn minimal_delta(delta: f64, modulus: f64) -> f64 {
    let r = delta.rem_euclid(modulus);
    if r > modulus / 2.0 {
        r - modulus
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnwrappedSample {
    /// Original time index.
    pub index: usize,
    /// Unwrapped phase, degrees.
    pub phase: f64,
    /// True when missed reads separate this sample from the previous one.
    pub gap_spanning: bool,
}

/// Unwraps the present samples of a track with the minimal-|δ| rule.
pub fn unwrap(track: &TagTrack, params: &RfParams) -> Result<Vec<UnwrappedSample>> {
    let mut out: Vec<UnwrappedSample> = Vec::with_capacity(track.len());
    let mut prev: Option<(usize, f64, f64)> = None;
    for (index, reading) in track.readings.iter().enumerate() {
        let Some(raw) = *reading else { continue };
        let sample = match prev {
            None => UnwrappedSample {
                index,
                phase: raw,
                gap_spanning: false,
            },
            Some((prev_index, prev_raw, prev_unwrapped)) => UnwrappedSample {
                index,
                phase: prev_unwrapped + minimal_delta(raw - prev_raw, params.reader_modulus),
                gap_spanning: index - prev_index > 1,
            },
        };
        prev = Some((index, raw, sample.phase));
        out.push(sample);
    }
    if out.is_empty() {
        return Err(Error::input(format!("tag {} has no present samples", track.epc)));
    }
    Ok(out)
}

/// One-way distance change implied by an unwrapped phase change.
pub fn phase_delta_to_distance_delta(dphase: f64, params: &RfParams) -> f64 {
    dphase * params.wavelength / 720.0
}
