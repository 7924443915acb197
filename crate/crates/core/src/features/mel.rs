use super::{FeatureConfig, FeatureError, PowerSpectrogram};

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters, `n_mels x n_bins`, with peak 1 at the center
/// frequency and zeros at both edges.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Vec<f64>,
    pub n_mels: usize,
    pub n_bins: usize,
    /// Edge and center frequencies, `n_mels + 2` points in Hz.
    pub points_hz: Vec<f64>,
    /// Non-zero bin range `[lo, hi)` of each filter.
    support: Vec<(usize, usize)>,
}

impl MelFilterbank {
    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.n_bins..(j + 1) * self.n_bins]
    }

    pub fn center_hz(&self, j: usize) -> f64 {
        self.points_hz[j + 1]
    }

    /// Mel energies for every frame, band-major (`n_mels x n_frames`).
    pub fn apply(&self, power: &PowerSpectrogram) -> Vec<f64> {
        assert_eq!(power.n_bins, self.n_bins, "filterbank and spectrogram disagree on bins");
        let mut out = vec![0.0; self.n_mels * power.n_frames];
        for t in 0..power.n_frames {
            let frame = power.frame(t);
            for j in 0..self.n_mels {
                let (lo, hi) = self.support[j];
                let row = &self.row(j)[lo..hi];
                out[j * power.n_frames + t] = row.iter().zip(&frame[lo..hi]).map(|(w, p)| w * p).sum();
            }
        }
        out
    }

    /// Mel energies of a single one-sided power spectrum.
    pub fn apply_spectrum(&self, spectrum: &[f64]) -> Vec<f64> {
        (0..self.n_mels)
            .map(|j| self.row(j).iter().zip(spectrum).map(|(w, p)| w * p).sum())
            .collect()
    }
}

pub fn mel_filterbank(cfg: &FeatureConfig) -> Result<MelFilterbank, FeatureError> {
    cfg.validate()?;
    let n_bins = cfg.n_bins();
    let n_mels = cfg.n_mels;
    let (mel_lo, mel_hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let points_hz: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;

    let mut weights = vec![0.0; n_mels * n_bins];
    let mut support = Vec::with_capacity(n_mels);
    for j in 0..n_mels {
        let (left, center, right) = (points_hz[j], points_hz[j + 1], points_hz[j + 2]);
        let row = &mut weights[j * n_bins..(j + 1) * n_bins];
        let (mut lo, mut hi) = (n_bins, 0);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let v = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            if v > 0.0 {
                *w = v;
                lo = lo.min(k);
                hi = hi.max(k + 1);
            }
        }
        if lo >= hi {
            return Err(FeatureError::Config(format!(
                "mel band {j} ({left:.1}-{right:.1} Hz) covers no FFT bin; lower n_mels or raise fft_size"
            )));
        }
        support.push((lo, hi));
    }
    Ok(MelFilterbank {
        weights,
        n_mels,
        n_bins,
        points_hz,
        support,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cfg() -> FeatureConfig {
        FeatureConfig::for_sample_rate(16_000)
    }

    #[test]
    fn mel_scale_roundtrip() {
        for f in [0.0, 100.0, 700.0, 4000.0, 22050.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9 * (1.0 + f));
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn filters_are_nonnegative_unimodal_triangles() {
        for c in [cfg(), FeatureConfig::default()] {
            let bank = mel_filterbank(&c).unwrap();
            assert_eq!(bank.n_mels, 96);
            let bin_hz = c.sample_rate as f64 / c.fft_size as f64;
            for j in 0..bank.n_mels {
                let row = bank.row(j);
                assert!(row.iter().all(|&w| w >= 0.0 && w <= 1.0));
                let peak = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1]), "band {j} rises");
                assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]), "band {j} falls");
                for (k, &w) in row.iter().enumerate() {
                    let f = k as f64 * bin_hz;
                    if f <= bank.points_hz[j] || f >= bank.points_hz[j + 2] {
                        assert_eq!(w, 0.0, "band {j} leaks at bin {k}");
                    }
                }
            }
        }
    }

    #[test]
    fn coverage_between_first_and_last_center() {
        let c = cfg();
        let bank = mel_filterbank(&c).unwrap();
        let bin_hz = c.sample_rate as f64 / c.fft_size as f64;
        for k in 0..bank.n_bins {
            let f = k as f64 * bin_hz;
            if f >= bank.center_hz(0) && f <= bank.center_hz(bank.n_mels - 1) {
                let total: f64 = (0..bank.n_mels).map(|j| bank.row(j)[k]).sum();
                assert!(total > 0.0, "bin {k} ({f} Hz) uncovered");
            }
        }
    }

    /// Power spectrum of a Hann-windowed unit sinusoid at frequency `f`,
    /// from the closed-form DTFT of the periodic Hann window.
    fn hann_tone_spectrum(f: f64, sr: f64, n: usize) -> Vec<f64> {
        let nf = n as f64;
        let dirichlet = |w: f64| -> (f64, f64) {
            // sum_{m<n} e^{-i w m} = e^{-i w (n-1)/2} sin(n w / 2) / sin(w / 2)
            let half = (w / 2.0).sin();
            let mag = if half.abs() < 1e-12 { nf } else { (nf * w / 2.0).sin() / half };
            let phase = -w * (nf - 1.0) / 2.0;
            (mag * phase.cos(), mag * phase.sin())
        };
        let hann = |w: f64| -> (f64, f64) {
            let step = 2.0 * PI / n as f64;
            let (a, b, c) = (dirichlet(w), dirichlet(w - step), dirichlet(w + step));
            (0.5 * a.0 - 0.25 * (b.0 + c.0), 0.5 * a.1 - 0.25 * (b.1 + c.1))
        };
        let w0 = 2.0 * PI * f / sr;
        (0..n / 2 + 1)
            .map(|k| {
                let wk = 2.0 * PI * k as f64 / n as f64;
                // sin = (e^{i w0 m} - e^{-i w0 m}) / 2i
                let (p, q) = (hann(wk - w0), hann(wk + w0));
                let re = 0.5 * (p.1 - q.1);
                let im = -0.5 * (p.0 - q.0);
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn tone_at_center_selects_its_band() {
        let c = FeatureConfig {
            n_mels: 40,
            ..cfg()
        };
        let bank = mel_filterbank(&c).unwrap();
        for j in 0..bank.n_mels {
            let spectrum = hann_tone_spectrum(bank.center_hz(j), c.sample_rate as f64, c.fft_size);
            let out = bank.apply_spectrum(&spectrum);
            let argmax = (0..out.len()).max_by(|&a, &b| out[a].total_cmp(&out[b])).unwrap();
            assert_eq!(argmax, j);
        }
    }

    #[test]
    fn too_many_bands_is_a_config_error() {
        let c = FeatureConfig {
            fft_size: 64,
            hop: 32,
            n_mels: 96,
            ..cfg()
        };
        assert!(matches!(mel_filterbank(&c), Err(FeatureError::Config(_))));
    }
}
