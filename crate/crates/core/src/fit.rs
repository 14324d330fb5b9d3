//! Peak-based fits of `|E_k|(t)` series: exponential rate and peak period.

use crate::error::{Error, Result};

/// A local maximum refined by a parabola through three samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub t: f64,
    pub value: f64,
}

/// Local maxima of `y(t)` with `t` in `[t0, t1]`.
///
/// A sample is a maximum when it exceeds its left neighbour, is not exceeded
/// by its right neighbour, and is the largest sample within `min_separation`
/// on either side. Flat plateaus without a lower neighbour on both sides do
/// not count. Positions and values are refined with a parabola through the
/// sample and its two neighbours; `transform` is applied to `y` first.
pub fn find_peaks(
    series: &[(f64, f64)],
    window: (f64, f64),
    min_separation: f64,
    transform: impl Fn(f64) -> f64,
) -> Vec<Peak> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .map(|&(t, y)| (t, transform(y)))
        .collect();
    let mut peaks = Vec::new();
    for i in 1..pts.len().saturating_sub(1) {
        let (t, y) = pts[i];
        if !(y > pts[i - 1].1 && y >= pts[i + 1].1) {
            continue;
        }
        // a plateau must fall off again on the right
        let mut j = i + 1;
        while j < pts.len() && pts[j].1 == y {
            j += 1;
        }
        if j == pts.len() || pts[j].1 > y {
            continue;
        }
        let dominant = pts
            .iter()
            .filter(|(s, _)| (s - t).abs() <= min_separation)
            .all(|&(_, v)| v <= y);
        if !dominant {
            continue;
        }
        let (t_l, y_l) = pts[i - 1];
        let (t_r, y_r) = pts[i + 1];
        let h = 0.5 * (t_r - t_l);
        let curvature = y_l - 2.0 * y + y_r;
        let (t_peak, y_peak) = if curvature < 0.0 && j == i + 1 {
            let offset = 0.5 * (y_l - y_r) / curvature;
            (t + offset * h, y - 0.25 * (y_l - y_r) * offset)
        } else {
            (t + 0.5 * (pts[j - 1].0 - t), y)
        };
        if let Some(last) = peaks.last() {
            let last: &Peak = last;
            if (t_peak - last.t).abs() < min_separation {
                continue;
            }
        }
        peaks.push(Peak {
            t: t_peak,
            value: y_peak,
        });
    }
    peaks
}

/// Least-squares slope of `ln y` through the local maxima of `y` in `window`.
///
/// Only the leading monotone run of maxima is used: the sequence ends at the
/// first maximum that breaks the trend of the first two, which is where a
/// decaying signal meets its noise floor. A series that is constant over the
/// window has rate zero. Otherwise at least four maxima are required.
pub fn fit_damping_rate(series: &[(f64, f64)], window: (f64, f64), min_separation: f64) -> Result<f64> {
    let inside: Vec<f64> = series
        .iter()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .map(|&(_, y)| y)
        .collect();
    if inside.len() >= 2 && inside.iter().all(|&y| y == inside[0]) && inside[0] > 0.0 {
        return Ok(0.0);
    }
    if inside.iter().any(|&y| y <= 0.0 || !y.is_finite()) {
        return Err(Error::Fit("rate fit needs positive finite values".into()));
    }
    let mut peaks = find_peaks(series, window, min_separation, f64::ln);
    if peaks.len() >= 2 {
        let decaying = peaks[1].value < peaks[0].value;
        let end = (1..peaks.len())
            .find(|&i| (peaks[i].value < peaks[i - 1].value) != decaying)
            .unwrap_or(peaks.len());
        peaks.truncate(end);
    }
    if peaks.len() < 4 {
        return Err(Error::Fit(format!(
            "rate fit needs at least 4 monotone local maxima in [{}, {}], found {}",
            window.0,
            window.1,
            peaks.len()
        )));
    }
    let n = peaks.len() as f64;
    let mean_t = peaks.iter().map(|p| p.t).sum::<f64>() / n;
    let mean_y = peaks.iter().map(|p| p.value).sum::<f64>() / n;
    let cov: f64 = peaks.iter().map(|p| (p.t - mean_t) * (p.value - mean_y)).sum();
    let var: f64 = peaks.iter().map(|p| (p.t - mean_t).powi(2)).sum();
    Ok(cov / var)
}

/// Mean spacing between successive local maxima of `y` in `window`.
///
/// For a rectified signal such as `|E_1|` of a standing wave this is half the
/// wave period. At least two maxima are required.
pub fn fit_period(series: &[(f64, f64)], window: (f64, f64), min_separation: f64) -> Result<f64> {
    let peaks = find_peaks(series, window, min_separation, |y| y);
    if peaks.len() < 2 {
        return Err(Error::Fit(format!(
            "period fit needs at least 2 local maxima in [{}, {}], found {}",
            window.0,
            window.1,
            peaks.len()
        )));
    }
    Ok((peaks[peaks.len() - 1].t - peaks[0].t) / (peaks.len() - 1) as f64)
}

/// Reads `(t, column)` pairs from a diagnostics CSV.
pub fn read_series(path: &std::path::Path, column: &str) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            context: path.display().to_string(),
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            context: path.display().to_string(),
            message: format!("missing column `{name}`"),
        })
    };
    let t_idx = find("t")?;
    let y_idx = find(column)?;
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            context: path.display().to_string(),
            message: e.to_string(),
        })?;
        let parse = |i: usize| -> Result<f64> {
            rec[i].trim().parse().map_err(|_| Error::Parse {
                context: format!("{} row {}", path.display(), line + 2),
                message: format!("`{}` is not a number", &rec[i]),
            })
        };
        out.push((parse(t_idx)?, parse(y_idx)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sample(f: impl Fn(f64) -> f64, t1: f64, dt: f64) -> Vec<(f64, f64)> {
        (0..=(t1 / dt).round() as usize)
            .map(|i| {
                let t = i as f64 * dt;
                (t, f(t))
            })
            .collect()
    }

    #[test]
    fn damped_rectified_cosine() {
        let s = sample(|t| (-0.85 * t).exp() * (1.4156 * t).cos().abs(), 30.0, 0.01);
        let rate = fit_damping_rate(&s, (2.0, 20.0), 0.0).unwrap();
        assert!((rate + 0.85).abs() < 1e-6, "{rate}");
    }

    #[test]
    fn noise_floor_is_excluded() {
        let s = sample(
            |t| (-0.85 * t).exp() * (1.4156 * t).cos().abs() + 1e-7 * (1.0 + 0.5 * (9.0 * t).sin()),
            30.0,
            0.01,
        );
        let rate = fit_damping_rate(&s, (2.0, 20.0), 0.0).unwrap();
        assert!((rate + 0.85).abs() < 0.01, "{rate}");
    }

    #[test]
    fn growing_series() {
        let s = sample(|t| (0.3 * t).exp() * (2.0 * t).cos().abs(), 30.0, 0.01);
        let rate = fit_damping_rate(&s, (0.0, 30.0), 0.0).unwrap();
        assert!((rate - 0.3).abs() < 1e-6, "{rate}");
    }

    #[test]
    fn constant_series() {
        let s = sample(|_| 3.0, 10.0, 0.1);
        assert_eq!(fit_damping_rate(&s, (0.0, 10.0), 0.0).unwrap(), 0.0);
        assert!(fit_period(&s, (0.0, 10.0), 0.0).is_err());
    }

    #[test]
    fn too_few_peaks() {
        let s = sample(|t| (-t).exp() * t.cos().abs(), 5.0, 0.01);
        assert!(fit_damping_rate(&s, (0.0, 5.0), 0.0).is_err());
    }

    #[test]
    fn period_of_rectified_sine() {
        let s = sample(|t| (PI * t / 197.0).sin().abs(), 1000.0, 1.0);
        let p = fit_period(&s, (0.0, 1000.0), 50.0).unwrap();
        assert!((p - 197.0).abs() < 0.5, "{p}");
        // a full period of 197 rectified gives maxima every 98.5
        let s = sample(|t| (2.0 * PI * t / 197.0).sin().abs(), 1000.0, 1.0);
        let p = fit_period(&s, (0.0, 1000.0), 20.0).unwrap();
        assert!((p - 98.5).abs() < 0.25, "{p}");
    }

    #[test]
    fn separation_suppresses_ripples() {
        let s = sample(
            |t| (PI * t / 200.0).cos().abs() + 0.05 * (7.0 * t).sin(),
            450.0,
            0.05,
        );
        let p = fit_period(&s, (20.0, 450.0), 50.0).unwrap();
        assert!((p - 200.0).abs() < 2.0, "{p}");
    }
}
