//! Dual-secure MIMO-OFDM integrated sensing and communication (ISAC) toolkit.
//!
//! The library covers the full design-and-validate loop for a monostatic
//! MIMO-OFDM base station that serves communication users while sensing
//! targets, in the presence of passive sensing and communication
//! eavesdroppers:
//!
//! * [`scenario`] — geometry, OFDM grid, arrays, targets, users,
//!   eavesdroppers, and the channels derived from them.
//! * [`waveform`] — symbol/artificial-noise generation, transmit blocks,
//!   frequency-domain echo synthesis and reception models.
//! * [`radar`] — angle/delay/Doppler matched filtering, expected ambiguity
//!   function evaluation, delay-Doppler / delay-angle maps, CA-CFAR
//!   detection and the correct-detection-probability metric.
//! * [`metrics`] — closed-form sensing SNR, PSL/ISL, eavesdropper reference
//!   rate, user rate and secrecy rate for a beamformer design.
//! * [`solver`] — a small self-contained interior-point solver for conic
//!   programs with Hermitian PSD blocks, trace-affine constraints and
//!   log-det terms.
//! * [`beamformer`] — the successive-convex-approximation outer loop that
//!   builds and solves the secure design program, plus Gaussian
//!   randomization for rank-one recovery.
//! * [`reference`] — independent brute-force reference implementations used
//!   by the validation oracles and the test suites.

pub mod beamformer;
pub mod cmat;
pub mod metrics;
pub mod radar;
pub mod reference;
pub mod rng;
pub mod scenario;
pub mod solver;
pub mod waveform;

pub use num_complex::Complex64;

/// Dense complex matrix used throughout the crate.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<Complex64>;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Convert a power from dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Convert a power from watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts * 1e3).log10()
}

/// Convert a linear power ratio to dB.
pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// Convert dB to a linear power ratio.
pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_round_trip() {
        assert!((dbm_to_watts(50.0) - 100.0).abs() < 1e-9);
        assert!((dbm_to_watts(-70.0) - 1e-10).abs() < 1e-22);
        assert!((watts_to_dbm(dbm_to_watts(17.3)) - 17.3).abs() < 1e-12);
    }

    #[test]
    fn db_round_trip() {
        assert!((db_to_lin(-10.0) - 0.1).abs() < 1e-12);
        assert!((lin_to_db(db_to_lin(-25.0)) + 25.0).abs() < 1e-12);
    }
}
