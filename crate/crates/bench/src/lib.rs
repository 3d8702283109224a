//! Shared fixtures for the benchmarks: trailing windows cut from the
//! synthetic corpus so timings reflect realistic series.

use soilcast_core::corpus::{generate, DEFAULT_CORPUS_SEED};
use soilcast_core::data::slice_window;
use soilcast_core::{Dataset, SensorSeries, WindowSpec};

pub fn corpus() -> Dataset {
    generate(DEFAULT_CORPUS_SEED).expect("default corpus generates").hourly
}

/// The last `hours` of one sensor.
pub fn window(dataset: &Dataset, sensor: &str, hours: usize) -> SensorSeries {
    let spec = WindowSpec::trailing(hours, dataset.n_slots()).expect("window fits the corpus");
    slice_window(dataset.get(sensor).expect("sensor in corpus"), spec).expect("window slices")
}

/// Gap-free values of the window, with gaps filled by the previous reading.
pub fn dense(series: &SensorSeries) -> Vec<f64> {
    let mut last = series.present().next().unwrap_or(0.0);
    series
        .values()
        .iter()
        .map(|v| {
            if let Some(x) = v {
                last = *x;
            }
            last
        })
        .collect()
}
