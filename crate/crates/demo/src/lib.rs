//! WebAssembly bindings for the browser demo. Every export takes plain
//! numbers or a row-major series and returns a JSON string.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use pulseflow::pcmask::PCMask;
use pulseflow::series::MultivariateSeries;
use pulseflow::spectral::{
    discover_global_period, periodicity_strength, top_k_periods, AmplitudeSpectrum, BandLocation, Intervention,
    NoiseKind,
};
use pulseflow::synth::{self, AnomalySpec, SynthConfig};
use pulseflow::{Error, Result};

fn one_sided(spec: &AmplitudeSpectrum) -> Vec<f64> {
    spec.amplitudes[..=spec.source_length / 2].to_vec()
}

/// Synthetic series with the given periods (comma separated) and anomaly
/// specs (`kind:start:duration:magnitude`, semicolon separated).
pub fn generate(length: usize, dims: usize, periods: &str, anomalies: &str, seed: u64) -> Result<Value> {
    let periods: Vec<usize> = periods
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad period `{p}`")))
        })
        .collect::<Result<_>>()?;
    let anomalies: Vec<AnomalySpec> = anomalies
        .split(';')
        .filter(|a| !a.trim().is_empty())
        .map(|a| a.trim().parse())
        .collect::<Result<_>>()?;
    let amplitudes = (0..periods.len()).map(|i| 3.0 / (i + 1) as f64).collect();
    let config = SynthConfig {
        length,
        dims,
        periods,
        amplitudes,
        anomalies,
        seed,
        ..SynthConfig::default()
    };
    let out = synth::generate_with_report(&config)?;
    Ok(json!({
        "dims": dims,
        "values": out.series.values(),
        "labels": out.series.labels(),
        "warnings": out.warnings,
    }))
}

/// Global period, top-k local periods, channel-averaged amplitude spectrum
/// and per-channel periodicity strength.
pub fn analyze(values: &[f64], dims: usize, k: usize) -> Result<Value> {
    let series = MultivariateSeries::new(values.to_vec(), dims, None, None, None)?;
    let gp = discover_global_period(&series)?;
    let top = top_k_periods(values, dims, k)?;
    let strength: Vec<f64> = (0..dims)
        .map(|d| periodicity_strength(&series.channel(d), gp.period))
        .collect::<Result<_>>()?;
    Ok(json!({
        "global_period": gp.period,
        "global_frequency": gp.frequency,
        "top_periods": top.periods,
        "top_frequencies": top.frequencies,
        "top_weights": top.weights,
        "spectrum": one_sided(&AmplitudeSpectrum::averaged(values, dims)?),
        "strength": strength,
    }))
}

/// Perturb the frequency band above (or below) `k_h_frac * T` and return the
/// series with both spectra.
pub fn perturb(
    values: &[f64],
    dims: usize,
    k_h_frac: f64,
    sigma: f64,
    laplace: bool,
    low_band: bool,
    seed: u64,
) -> Result<Value> {
    let iv = Intervention {
        k_h_frac,
        sigma,
        noise: if laplace {
            NoiseKind::Laplace
        } else {
            NoiseKind::Gaussian
        },
        location: if low_band {
            BandLocation::Low
        } else {
            BandLocation::High
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = iv.apply(values, dims, &mut rng)?;
    let len = values.len() / dims;
    Ok(json!({
        "values": out,
        "split_bin": iv.split_bin(len),
        "before": one_sided(&AmplitudeSpectrum::averaged(values, dims)?),
        "after": one_sided(&AmplitudeSpectrum::averaged(&out, dims)?),
    }))
}

/// Time pattern of the checkerboard mask (or the half split) for one window.
pub fn mask(period: usize, window: usize, half: bool) -> Result<Value> {
    let m = if half {
        PCMask::half_split(window, 1)?
    } else {
        PCMask::build(period, window, 1)?
    };
    Ok(json!({
        "period": m.period(),
        "bits": m.time_pattern(),
        "complement": m.complement().time_pattern(),
    }))
}

fn to_js(r: Result<Value>) -> std::result::Result<String, JsValue> {
    r.map(|v| v.to_string())
        .map_err(|e| JsValue::from_str(&format!("{}: {e}", e.kind())))
}

#[wasm_bindgen(js_name = generate)]
pub fn generate_js(
    length: usize,
    dims: usize,
    periods: &str,
    anomalies: &str,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    to_js(generate(length, dims, periods, anomalies, seed.into()))
}

#[wasm_bindgen(js_name = analyze)]
pub fn analyze_js(values: &[f64], dims: usize, k: usize) -> std::result::Result<String, JsValue> {
    to_js(analyze(values, dims, k))
}

#[wasm_bindgen(js_name = perturb)]
pub fn perturb_js(
    values: &[f64],
    dims: usize,
    k_h_frac: f64,
    sigma: f64,
    laplace: bool,
    low_band: bool,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    to_js(perturb(values, dims, k_h_frac, sigma, laplace, low_band, seed.into()))
}

#[wasm_bindgen(js_name = mask)]
pub fn mask_js(period: usize, window: usize, half: bool) -> std::result::Result<String, JsValue> {
    to_js(mask(period, window, half))
}
