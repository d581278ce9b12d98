//! Audio front end: WAV loading, Butterworth prefiltering, resampling,
//! STFT spectrograms and stationary-noise removal.
//!
//! All functions are pure with respect to their inputs and can run
//! concurrently across files.

use crate::error::{Error, Result};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::path::Path;

/// Mono waveform with its sample rate and time-expansion factor.
///
/// `time_expansion` of 10 means the recording plays 10x slower than the
/// original scene, so every stated frequency is 1/10 of the real one.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub time_expansion: f32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32, time_expansion: f32) -> Self {
        debug_assert!(sample_rate > 0);
        debug_assert!(time_expansion >= 1.0);
        Self { samples, sample_rate, time_expansion }
    }

    /// Duration of the recorded (possibly expanded) signal in seconds.
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Duration of the original scene in seconds.
    pub fn real_duration_secs(&self) -> f64 {
        self.duration_secs() / self.time_expansion as f64
    }
}

/// Magnitude spectrogram, stored row-major as `[freq_bins][frames]` so each
/// frequency band is contiguous in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    values: Vec<f32>,
    pub freq_bins: usize,
    pub frames: usize,
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn new(
        values: Vec<f32>,
        freq_bins: usize,
        frames: usize,
        n_fft: usize,
        hop: usize,
        sample_rate: u32,
    ) -> Self {
        assert_eq!(values.len(), freq_bins * frames);
        assert_eq!(freq_bins, n_fft / 2 + 1);
        Self { values, freq_bins, frames, n_fft, hop, sample_rate }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// All frames of one frequency bin.
    pub fn row(&self, bin: usize) -> &[f32] {
        &self.values[bin * self.frames..(bin + 1) * self.frames]
    }

    pub fn at(&self, bin: usize, frame: usize) -> f32 {
        self.values[bin * self.frames + frame]
    }

    /// Center frequency of a bin in Hz (at the recorded rate).
    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.n_fft as f64
    }

    /// Number of frames a signal of `len` samples yields (frames fully
    /// inside the signal, no padding).
    pub fn frame_count(len: usize, n_fft: usize, hop: usize) -> usize {
        if len < n_fft {
            0
        } else {
            1 + (len - n_fft) / hop
        }
    }
}

/// Settings for the preprocessing chain. Defaults follow the pipeline used
/// for 1:10 time-expanded full-spectrum recordings.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DspConfig {
    /// High-pass cutoff on the recorded (expanded) signal, Hz.
    pub cutoff_hz: f64,
    /// Butterworth order (even).
    pub filter_order: usize,
    /// Rate everything is resampled to before the STFT.
    pub target_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self { cutoff_hz: 1500.0, filter_order: 10, target_rate: 22_050, n_fft: 512, hop: 128 }
    }
}

/// Read a RIFF/WAV file into a mono clip.
///
/// Accepts 16/24-bit integer PCM and 32-bit float, one or two channels
/// (stereo is averaged). `time_expansion` comes from caller metadata since
/// WAV headers do not carry it.
pub fn read_wav<P: AsRef<Path>>(path: P, time_expansion: f32) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path.as_ref()).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::Unsupported(format!("{} channels", spec.channels)));
    }
    let mono = |mut v: Vec<f32>| -> Vec<f32> {
        if spec.channels == 2 {
            v = v.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        }
        v
    };
    let samples: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => {
            let mut r = reader;
            let v: std::result::Result<Vec<i16>, _> = r.samples::<i16>().collect();
            v.map_err(map_hound)?.into_iter().map(|s| s as f32 / 32768.0).collect()
        }
        (hound::SampleFormat::Int, 24) => {
            let mut r = reader;
            let v: std::result::Result<Vec<i32>, _> = r.samples::<i32>().collect();
            v.map_err(map_hound)?.into_iter().map(|s| s as f32 / 8_388_608.0).collect()
        }
        (hound::SampleFormat::Int, 32) => {
            let mut r = reader;
            let v: std::result::Result<Vec<i32>, _> = r.samples::<i32>().collect();
            v.map_err(map_hound)?.into_iter().map(|s| s as f32 / 2_147_483_648.0).collect()
        }
        (hound::SampleFormat::Float, 32) => {
            let mut r = reader;
            let v: std::result::Result<Vec<f32>, _> = r.samples::<f32>().collect();
            v.map_err(map_hound)?.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect()
        }
        (f, b) => return Err(Error::Unsupported(format!("{f:?} at {b} bits"))),
    };
    Ok(AudioClip::new(mono(samples), spec.sample_rate, time_expansion))
}

/// Write a mono clip as 16-bit PCM.
pub fn write_wav<P: AsRef<Path>>(path: P, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec).map_err(map_hound)?;
    for &s in &clip.samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(q).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)?;
    Ok(())
}

fn map_hound(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        hound::Error::FormatError(m) => Error::WavFormat(m.to_string()),
        hound::Error::Unsupported => Error::Unsupported("wav encoding".into()),
        other => Error::WavFormat(other.to_string()),
    }
}

/// One second-order section in transposed direct form II.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    /// High-pass section from the analog Butterworth prototype
    /// `1/(s^2 + c s + 1)` via the LP->HP transform and the bilinear
    /// transform with prewarping (`k = tan(pi fc/fs)`).
    fn highpass(c: f64, k: f64) -> Self {
        let k2 = k * k;
        let norm = 1.0 + c * k + k2;
        Biquad {
            b0: 1.0 / norm,
            b1: -2.0 / norm,
            b2: 1.0 / norm,
            a1: (2.0 * k2 - 2.0) / norm,
            a2: (1.0 - c * k + k2) / norm,
        }
    }
}

/// Zero-phase-free causal Butterworth high-pass as a cascade of
/// second-order sections. Output length equals input length.
pub fn highpass_butterworth(clip: &AudioClip, cutoff_hz: f64, order: usize) -> Result<AudioClip> {
    let nyquist = clip.sample_rate as f64 / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::Parameter(format!(
            "cutoff {cutoff_hz} Hz outside (0, {nyquist}) at rate {}",
            clip.sample_rate
        )));
    }
    if order == 0 || order % 2 != 0 {
        return Err(Error::Parameter(format!("filter order {order} must be even and > 0")));
    }
    let n = order as f64;
    let k = (std::f64::consts::PI * cutoff_hz / clip.sample_rate as f64).tan();
    let sections: Vec<Biquad> = (1..=order / 2)
        .map(|m| {
            // Conjugate pole pairs of the analog prototype: the quadratic
            // factor is s^2 + c s + 1 with c = -2 cos(pi (2m + N - 1)/(2N)).
            let angle = std::f64::consts::PI * (2.0 * m as f64 + n - 1.0) / (2.0 * n);
            Biquad::highpass(-2.0 * angle.cos(), k)
        })
        .collect();

    let mut out = vec![0.0f32; clip.samples.len()];
    let mut state = vec![(0.0f64, 0.0f64); sections.len()];
    for (i, &x0) in clip.samples.iter().enumerate() {
        let mut x = x0 as f64;
        for (sec, st) in sections.iter().zip(state.iter_mut()) {
            let y = sec.b0 * x + st.0;
            st.0 = sec.b1 * x - sec.a1 * y + st.1;
            st.1 = sec.b2 * x - sec.a2 * y;
            x = y;
        }
        out[i] = x as f32;
    }
    Ok(AudioClip::new(out, clip.sample_rate, clip.time_expansion))
}

/// Polyphase windowed-sinc resampler.
///
/// The anti-alias cutoff sits at 0.45x the lower of the two sample rates,
/// i.e. 0.9x the output Nyquist when downsampling, so tonal content below
/// the new Nyquist is preserved.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::Parameter("target rate must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let src = clip.sample_rate as u64;
    let tgt = target_rate as u64;
    let g = gcd(src, tgt);
    let up = (tgt / g) as usize; // phase count
    let down = (src / g) as usize;

    let in_len = clip.samples.len();
    let out_len = ((in_len as f64) * tgt as f64 / src as f64).round() as usize;

    // Cutoff in cycles per source sample.
    let fc = 0.45 * (src.min(tgt) as f64) / src as f64 / 2.0 * 2.0; // 0.45 * min_rate / src
    let fc = fc / 2.0; // cycles/sample = hz_fraction / 2
    // Half-width covering 16 sinc zero crossings.
    let half_width = ((16.0 / (2.0 * fc)).ceil() as usize).max(8);

    let kernel = |tau: f64| -> f64 {
        if tau.abs() >= half_width as f64 {
            return 0.0;
        }
        let u = tau / half_width as f64;
        let window = 0.42 + 0.5 * (std::f64::consts::PI * u).cos()
            + 0.08 * (2.0 * std::f64::consts::PI * u).cos();
        let x = 2.0 * fc * tau;
        let sinc = if x.abs() < 1e-12 {
            1.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        };
        2.0 * fc * sinc * window
    };

    // Precompute per-phase taps when the phase count is manageable.
    let taps_per_phase = 2 * half_width + 1;
    let phase_table: Option<Vec<Vec<f64>>> = if up <= 4096 {
        Some(
            (0..up)
                .map(|p| {
                    let frac = p as f64 * down as f64 / up as f64
                        - (p * down / up) as f64;
                    let mut taps: Vec<f64> =
                        (0..taps_per_phase).map(|j| kernel(frac + half_width as f64 - j as f64)).collect();
                    let s: f64 = taps.iter().sum();
                    if s.abs() > 1e-12 {
                        for t in &mut taps {
                            *t /= s;
                        }
                    }
                    taps
                })
                .collect(),
        )
    } else {
        None
    };

    let x = &clip.samples;
    let mut out = vec![0.0f32; out_len];
    for (n, o) in out.iter_mut().enumerate() {
        let num = n * down;
        let center = num / up;
        let mut acc = 0.0f64;
        match &phase_table {
            Some(table) => {
                let taps = &table[n % up];
                let start = center as isize - half_width as isize;
                for (j, &t) in taps.iter().enumerate() {
                    let m = start + j as isize;
                    if m >= 0 && (m as usize) < in_len {
                        acc += t * x[m as usize] as f64;
                    }
                }
            }
            None => {
                let pos = num as f64 / up as f64;
                let lo = (pos - half_width as f64).ceil() as isize;
                let hi = (pos + half_width as f64).floor() as isize;
                let mut wsum = 0.0f64;
                let mut raw = 0.0f64;
                for m in lo..=hi {
                    let t = kernel(pos - m as f64);
                    wsum += t;
                    if m >= 0 && (m as usize) < in_len {
                        raw += t * x[m as usize] as f64;
                    }
                }
                acc = if wsum.abs() > 1e-12 { raw / wsum } else { raw };
            }
        }
        *o = acc as f32;
    }
    Ok(AudioClip::new(out, target_rate, clip.time_expansion))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Magnitude STFT with a Hann window and no padding: every frame lies fully
/// inside the signal, so `frames = 1 + (len - n_fft)/hop`.
pub fn stft_spectrogram(clip: &AudioClip, n_fft: usize, hop: usize) -> Result<Spectrogram> {
    if !n_fft.is_power_of_two() || n_fft < 2 {
        return Err(Error::Parameter(format!("n_fft {n_fft} must be a power of two")));
    }
    if hop == 0 || hop > n_fft {
        return Err(Error::Parameter(format!("hop {hop} must be in 1..={n_fft}")));
    }
    if clip.samples.len() < n_fft {
        return Err(Error::EmptySignal(format!(
            "{} samples < window of {n_fft}",
            clip.samples.len()
        )));
    }
    let frames = Spectrogram::frame_count(clip.samples.len(), n_fft, hop);
    let freq_bins = n_fft / 2 + 1;

    let window: Vec<f32> = (0..n_fft)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n_fft as f64).cos())
        .map(|w| w as f32)
        .collect();

    let mut planner = FftPlanner::<f32>::new();
    let fft = planner.plan_fft_forward(n_fft);

    let mut values = vec![0.0f32; freq_bins * frames];
    let mut buf = vec![Complex::new(0.0f32, 0.0f32); n_fft];
    let mut scratch = vec![Complex::new(0.0f32, 0.0f32); fft.get_inplace_scratch_len()];
    for frame in 0..frames {
        let start = frame * hop;
        for i in 0..n_fft {
            buf[i] = Complex::new(clip.samples[start + i] * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for bin in 0..freq_bins {
            values[bin * frames + frame] = buf[bin].norm();
        }
    }
    Ok(Spectrogram::new(values, freq_bins, frames, n_fft, hop, clip.sample_rate))
}

/// Remove stationary noise: subtract each frequency band's temporal mean
/// and clamp at zero. Shape is unchanged.
pub fn denoise(spec: &Spectrogram) -> Spectrogram {
    let mut out = spec.clone();
    let frames = spec.frames;
    for bin in 0..spec.freq_bins {
        let row = &mut out.values[bin * frames..(bin + 1) * frames];
        let mean = (row.iter().map(|&v| v as f64).sum::<f64>() / frames as f64) as f32;
        for v in row.iter_mut() {
            *v = (*v - mean).max(0.0);
        }
    }
    out
}

/// Full preprocessing chain: high-pass, resample, STFT, denoise.
pub fn preprocess_clip(clip: &AudioClip, cfg: &DspConfig) -> Result<Spectrogram> {
    let filtered = highpass_butterworth(clip, cfg.cutoff_hz, cfg.filter_order)?;
    let resampled = resample(&filtered, cfg.target_rate)?;
    let spec = stft_spectrogram(&resampled, cfg.n_fft, cfg.hop)?;
    Ok(denoise(&spec))
}

/// High-pass + resample only; used where the time signal itself is needed
/// (segment extraction and time-domain mixing).
pub fn preprocess_waveform(clip: &AudioClip, cfg: &DspConfig) -> Result<AudioClip> {
    let filtered = highpass_butterworth(clip, cfg.cutoff_hz, cfg.filter_order)?;
    resample(&filtered, cfg.target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, len: usize, amp: f32) -> AudioClip {
        let samples = (0..len)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() as f32)
            .collect();
        AudioClip::new(samples, rate, 1.0)
    }

    /// Steady-state amplitude of a sine component via quadrature projection.
    fn sine_amplitude(samples: &[f32], freq: f64, rate: u32) -> f64 {
        let n = samples.len();
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for (i, &x) in samples.iter().enumerate() {
            let ph = 2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64;
            s += x as f64 * ph.sin();
            c += x as f64 * ph.cos();
        }
        2.0 * (s * s + c * c).sqrt() / n as f64
    }

    #[test]
    fn wav_roundtrip_16bit_at_96k() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let clip = sine(1000.0, 96_000, 96_000, 0.5);
        write_wav(&path, &clip).unwrap();
        let back = read_wav(&path, 10.0).unwrap();
        assert_eq!(back.samples.len(), 96_000);
        assert_eq!(back.sample_rate, 96_000);
        assert_eq!(back.time_expansion, 10.0);
        let err: f32 = clip
            .samples
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max);
        assert!(err < 1.0 / 32000.0, "quantization error {err}");
    }

    #[test]
    fn wav_all_zero_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.wav");
        write_wav(&path, &AudioClip::new(vec![0.0; 4096], 22_050, 1.0)).unwrap();
        let back = read_wav(&path, 1.0).unwrap();
        assert!(back.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn wav_24bit_fullscale_scaling() {
        // 0x7FFFFF must decode to 1 - 2^-23.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s24.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 96_000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0x7F_FFFF_i32).unwrap();
        w.write_sample(-0x80_0000_i32).unwrap();
        w.finalize().unwrap();
        let clip = read_wav(&path, 1.0).unwrap();
        let expect = 1.0 - (-23.0f64).exp2();
        assert!((clip.samples[0] as f64 - expect).abs() < 1e-6);
        assert!((clip.samples[1] as f64 + 1.0).abs() < 1e-6);
    }

    #[test]
    fn wav_stereo_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 48_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(16384_i16).unwrap();
            w.write_sample(-16384_i16).unwrap();
        }
        w.finalize().unwrap();
        let clip = read_wav(&path, 1.0).unwrap();
        assert_eq!(clip.samples.len(), 100);
        assert!(clip.samples.iter().all(|&s| s.abs() < 1e-4));
    }

    #[test]
    fn wav_malformed_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"RIFFxxxxNOTWAVE").unwrap();
        match read_wav(&path, 1.0) {
            Err(Error::WavFormat(_)) | Err(Error::Io(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn highpass_rejects_dc() {
        let clip = AudioClip::new(vec![0.5; 8000], 22_050, 1.0);
        let out = highpass_butterworth(&clip, 1500.0, 10).unwrap();
        assert_eq!(out.samples.len(), 8000);
        let peak = out.samples[1000..].iter().map(|s| s.abs()).fold(0.0, f32::max);
        assert!(peak < 1e-5, "residual DC {peak}");
    }

    #[test]
    fn highpass_gain_at_cutoff_is_minus_3db() {
        let rate = 22_050;
        let cutoff = 1500.0;
        let clip = sine(cutoff, rate, rate as usize * 2, 0.5);
        let out = highpass_butterworth(&clip, cutoff, 10).unwrap();
        // Skip one second of transient.
        let amp = sine_amplitude(&out.samples[rate as usize..], cutoff, rate);
        let gain_db = 20.0 * (amp / 0.5).log10();
        assert!((gain_db + 3.0103).abs() < 0.3, "cutoff gain {gain_db} dB");
    }

    #[test]
    fn highpass_passband_flat_at_4x_cutoff() {
        let rate = 22_050;
        let clip = sine(6000.0, rate, rate as usize * 2, 0.5);
        let out = highpass_butterworth(&clip, 1500.0, 10).unwrap();
        let amp = sine_amplitude(&out.samples[rate as usize..], 6000.0, rate);
        let gain_db = 20.0 * (amp / 0.5).log10();
        assert!(gain_db.abs() < 0.2, "passband gain {gain_db} dB");
    }

    #[test]
    fn highpass_stopband_octave_below() {
        let rate = 22_050;
        let clip = sine(750.0, rate, rate as usize * 2, 0.5);
        let out = highpass_butterworth(&clip, 1500.0, 10).unwrap();
        let amp = sine_amplitude(&out.samples[rate as usize..], 750.0, rate);
        let gain_db = 20.0 * (amp / 0.5).log10();
        assert!(gain_db < -50.0, "stopband gain {gain_db} dB");
    }

    #[test]
    fn highpass_cutoff_at_nyquist_rejected() {
        let clip = sine(100.0, 22_050, 1000, 0.5);
        assert!(matches!(
            highpass_butterworth(&clip, 11_025.0, 10),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn highpass_linearity() {
        let rate = 22_050;
        let mut clip = sine(2000.0, rate, 4000, 0.8);
        for (i, s) in clip.samples.iter_mut().enumerate() {
            *s += 0.1 * ((i as f32 * 0.37).sin());
        }
        let scaled = AudioClip::new(clip.samples.iter().map(|s| s * 0.25).collect(), rate, 1.0);
        let a = highpass_butterworth(&clip, 1500.0, 10).unwrap();
        let b = highpass_butterworth(&scaled, 1500.0, 10).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((x * 0.25 - y).abs() < 1e-6);
        }
    }

    #[test]
    fn resample_96k_to_22050_length() {
        let clip = sine(1000.0, 96_000, 96_000, 0.5);
        let out = resample(&clip, 22_050).unwrap();
        assert_eq!(out.samples.len(), 22_050);
        assert_eq!(out.sample_rate, 22_050);
    }

    #[test]
    fn resample_identity_is_bit_exact() {
        let clip = sine(1234.0, 22_050, 5000, 0.7);
        let out = resample(&clip, 22_050).unwrap();
        assert_eq!(out.samples, clip.samples);
    }

    #[test]
    fn resample_preserves_tone_location() {
        let clip = sine(5000.0, 96_000, 96_000, 0.5);
        let out = resample(&clip, 22_050).unwrap();
        let spec = stft_spectrogram(&out, 512, 128).unwrap();
        // Find the dominant bin in a middle frame.
        let frame = spec.frames / 2;
        let mut best = (0usize, 0.0f32);
        for bin in 0..spec.freq_bins {
            let v = spec.at(bin, frame);
            if v > best.1 {
                best = (bin, v);
            }
        }
        let expect = (5000.0 * 512.0 / 22_050.0_f64).round() as usize;
        assert!(
            (best.0 as isize - expect as isize).abs() <= 1,
            "peak bin {} expected {expect}",
            best.0
        );
    }

    #[test]
    fn stft_frame_count_example() {
        let clip = AudioClip::new(vec![0.01; 172_160], 22_050, 1.0);
        let spec = stft_spectrogram(&clip, 512, 128).unwrap();
        assert_eq!(spec.frames, 1342);
        assert_eq!(spec.freq_bins, 257);
    }

    #[test]
    fn stft_zero_in_zero_out() {
        let clip = AudioClip::new(vec![0.0; 4096], 22_050, 1.0);
        let spec = stft_spectrogram(&clip, 512, 128).unwrap();
        assert!(spec.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stft_peak_bin_of_2500hz() {
        let clip = sine(2500.0, 22_050, 44_100, 0.5);
        let spec = stft_spectrogram(&clip, 512, 128).unwrap();
        let frame = spec.frames / 2;
        let mut best = (0usize, 0.0f32);
        for bin in 0..spec.freq_bins {
            let v = spec.at(bin, frame);
            if v > best.1 {
                best = (bin, v);
            }
        }
        assert_eq!(best.0, 58);
    }

    #[test]
    fn stft_too_short_signal() {
        let clip = AudioClip::new(vec![0.0; 100], 22_050, 1.0);
        assert!(matches!(stft_spectrogram(&clip, 512, 128), Err(Error::EmptySignal(_))));
    }

    #[test]
    fn denoise_flattens_constant_rows() {
        let frames = 10;
        let values: Vec<f32> = (0..257).flat_map(|bin| vec![bin as f32 * 0.1; frames]).collect();
        let spec = Spectrogram::new(values, 257, frames, 512, 128, 22_050);
        let out = denoise(&spec);
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn denoise_single_impulse_column() {
        let frames = 16;
        let mut values = vec![0.0f32; 257 * frames];
        values[100 * frames + 7] = 2.0;
        let spec = Spectrogram::new(values, 257, frames, 512, 128, 22_050);
        let out = denoise(&spec);
        let expect = 2.0 * (1.0 - 1.0 / frames as f32);
        assert!((out.at(100, 7) - expect).abs() < 1e-6);
        for f in 0..frames {
            if f != 7 {
                assert_eq!(out.at(100, f), 0.0);
            }
        }
    }

    #[test]
    fn denoise_bounded_by_input() {
        let frames = 12;
        let values: Vec<f32> = (0..257 * frames).map(|i| ((i * 37 % 100) as f32) * 0.01).collect();
        let spec = Spectrogram::new(values, 257, frames, 512, 128, 22_050);
        let out = denoise(&spec);
        for (a, b) in out.values().iter().zip(spec.values()) {
            assert!(*a >= 0.0 && *a <= *b + 1e-7);
        }
        let twice = denoise(&out);
        for (a, b) in twice.values().iter().zip(out.values()) {
            assert!(*a >= 0.0 && *a <= *b + 1e-7);
        }
    }

    #[test]
    fn preprocess_chain_deterministic() {
        let clip = sine(2500.0, 96_000, 96_000, 0.4);
        let cfg = DspConfig::default();
        let a = preprocess_clip(&clip, &cfg).unwrap();
        let b = preprocess_clip(&clip, &cfg).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn resampler_preserves_duration() {
        for (len, src, tgt) in [(96_000usize, 96_000u32, 22_050u32), (48_000, 48_000, 22_050), (10_000, 22_050, 44_100)] {
            let clip = AudioClip::new(vec![0.1; len], src, 1.0);
            let out = resample(&clip, tgt).unwrap();
            let in_dur = len as f64 / src as f64;
            let out_dur = out.samples.len() as f64 / tgt as f64;
            assert!((in_dur - out_dur).abs() < 1.0 / tgt as f64);
        }
    }
}
