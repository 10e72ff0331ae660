//! Seeded synthetic dyadic corpus.
//!
//! Each clip follows one latent emotion trajectory: smooth AR(1) walks over
//! 8 expression logits plus valence and arousal. The speaker's facial and
//! speech features are fixed random linear maps of that latent plus noise,
//! so either modality can be recovered from the other. The listener mirrors
//! the speaker's facial emotion at reduced intensity after a fixed lag;
//! the other appropriate reactions perturb that lag and intensity.

use crate::emotion::{EmotionFeatures, EmotionSource, FACIAL_EMOTION_DIM, NUM_AUS, NUM_EXPRESSIONS};
use crate::error::{invalid, Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Width of the latent vector that drives both modalities.
pub const LATENT_DIM: usize = NUM_EXPRESSIONS + 2;
/// Listener reactions use the facial emotion layout.
pub const LISTENER_DIM: usize = FACIAL_EMOTION_DIM;

const AR_COEF: f64 = 0.9;
const LOGIT_SCALE: f64 = 1.5;
const AFFECT_SCALE: f64 = 1.0;
const LISTENER_DAMPING: f64 = 0.8;
const AMPLITUDE_JITTER: f64 = 0.25;
const MAX_LAG_JITTER: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub num_clips: usize,
    pub frames: usize,
    pub frame_rate: f64,
    pub facial_dim: usize,
    pub speech_dim: usize,
    pub seed: u64,
    pub num_appropriate: usize,
    pub listener_lag_frames: usize,
    pub noise_std: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            num_clips: 128,
            frames: 64,
            frame_rate: 25.0,
            facial_dim: 32,
            speech_dim: 24,
            seed: 0,
            num_appropriate: 3,
            listener_lag_frames: 3,
            noise_std: 0.1,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clips < 4 {
            return invalid(format!("num_clips must be at least 4, got {}", self.num_clips));
        }
        if self.num_appropriate < 1 {
            return invalid("num_appropriate must be at least 1");
        }
        if self.frames < 2 || self.listener_lag_frames >= self.frames {
            return invalid(format!(
                "listener_lag_frames {} must be below frames {}",
                self.listener_lag_frames, self.frames
            ));
        }
        if self.facial_dim == 0 || self.speech_dim == 0 {
            return invalid("feature dimensions must be positive");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) || !(self.frame_rate > 0.0) {
            return invalid("noise_std must be finite and non-negative, frame_rate positive");
        }
        Ok(())
    }
}

/// One dyadic clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord<S> {
    pub id: String,
    /// Speaker facial features `[T × d_f]`.
    pub facial: Tensor<S>,
    /// Speaker speech features `[T × d_s]`.
    pub speech: Tensor<S>,
    pub emotion_facial: EmotionFeatures<S>,
    pub emotion_speech: EmotionFeatures<S>,
    /// The reaction the recorded listener actually produced, `[T × d_l]`.
    pub listener: Tensor<S>,
    /// Every appropriate reaction, the recorded one first.
    pub appropriate: Vec<Tensor<S>>,
}

impl<S: Scalar> ClipRecord<S> {
    pub fn frames(&self) -> usize {
        self.facial.rows()
    }

    /// Speaker behaviour used as the synchrony reference.
    pub fn speaker_reference(&self) -> &Tensor<S> {
        self.emotion_facial.values()
    }

    pub fn cast<T: Scalar>(&self) -> Result<ClipRecord<T>> {
        Ok(ClipRecord {
            id: self.id.clone(),
            facial: self.facial.cast()?,
            speech: self.speech.cast()?,
            emotion_facial: EmotionFeatures::unchecked(EmotionSource::Facial, self.emotion_facial.values().cast()?)?,
            emotion_speech: EmotionFeatures::unchecked(EmotionSource::Speech, self.emotion_speech.values().cast()?)?,
            listener: self.listener.cast()?,
            appropriate: self.appropriate.iter().map(|t| t.cast()).collect::<Result<_>>()?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.frames();
        let lens = [
            self.speech.rows(),
            self.emotion_facial.frames(),
            self.emotion_speech.frames(),
            self.listener.rows(),
        ];
        if let Some(&bad) = lens.iter().chain(self.appropriate.iter().map(|g| &g.shape()[0])).find(|&&n| n != t) {
            return Err(Error::LengthMismatch(t, bad));
        }
        if self.appropriate.is_empty() {
            return Err(Error::Insufficient(format!("clip {} has no appropriate reactions", self.id)));
        }
        self.emotion_facial.validate()?;
        self.emotion_speech.validate()
    }
}

struct Maps {
    facial: Vec<f64>,
    speech: Vec<f64>,
    au_weight: Vec<f64>,
    au_bias: Vec<f64>,
    speech_mix: Vec<f64>,
}

impl Maps {
    fn draw(spec: &CorpusSpec, rng: &mut RngState) -> Self {
        let scale = (1.0 / LATENT_DIM as f64).sqrt();
        let mut gauss = |n: usize, s: f64| -> Vec<f64> { (0..n).map(|_| s * rng.normal()).collect() };
        let facial = gauss(spec.facial_dim * LATENT_DIM, 2.0 * scale);
        let speech = gauss(spec.speech_dim * LATENT_DIM, 2.0 * scale);
        let au_weight = gauss(NUM_AUS * LATENT_DIM, 1.5);
        let au_bias = gauss(NUM_AUS, 0.5);
        let mut speech_mix = gauss(NUM_EXPRESSIONS * NUM_EXPRESSIONS, 0.3);
        for i in 0..NUM_EXPRESSIONS {
            speech_mix[i * NUM_EXPRESSIONS + (i + 3) % NUM_EXPRESSIONS] += 1.0;
        }
        Self { facial, speech, au_weight, au_bias, speech_mix }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn mat_vec(m: &[f64], rows: usize, v: &[f64]) -> Vec<f64> {
    let cols = v.len();
    (0..rows).map(|r| m[r * cols..(r + 1) * cols].iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Per-frame emotion state on the extended timeline.
struct State {
    latent: Vec<f64>,
    facial_emotion: Vec<f64>,
    speech_emotion: Vec<f64>,
}

fn trajectory(len: usize, maps: &Maps, rng: &mut RngState) -> Vec<State> {
    let innov = (1.0 - AR_COEF * AR_COEF).sqrt();
    let mut logits: Vec<f64> = (0..NUM_EXPRESSIONS).map(|_| LOGIT_SCALE * rng.normal()).collect();
    let mut affect = [AFFECT_SCALE * rng.normal(), AFFECT_SCALE * rng.normal()];
    let mut out = Vec::with_capacity(len);
    for k in 0..len {
        if k > 0 {
            for l in logits.iter_mut() {
                *l = AR_COEF * *l + innov * LOGIT_SCALE * rng.normal();
            }
            for a in affect.iter_mut() {
                *a = AR_COEF * *a + innov * AFFECT_SCALE * rng.normal();
            }
        }
        let probs = softmax(&logits);
        let (valence, arousal) = (affect[0].tanh(), affect[1].tanh());
        let mut latent = probs.clone();
        latent.push(valence);
        latent.push(arousal);
        let aus: Vec<f64> = mat_vec(&maps.au_weight, NUM_AUS, &latent)
            .iter()
            .zip(&maps.au_bias)
            .map(|(v, b)| 1.0 / (1.0 + (-(v + b)).exp()))
            .collect();
        let mut facial_emotion = aus;
        facial_emotion.extend([valence, arousal]);
        facial_emotion.extend(&probs);
        let mut speech_emotion = vec![valence, arousal];
        speech_emotion.extend(softmax(&mat_vec(&maps.speech_mix, NUM_EXPRESSIONS, &logits)));
        out.push(State { latent, facial_emotion, speech_emotion });
    }
    out
}

/// Listener row: speaker facial emotion with AU and affect scaled by `gain`.
fn listener_row(state: &State, gain: f64) -> Vec<f64> {
    let mut row = state.facial_emotion.clone();
    for v in &mut row[..NUM_AUS + 2] {
        *v *= gain;
    }
    row
}

/// Generates the corpus described by `spec`; identical specs give identical corpora.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<ClipRecord<f64>>> {
    Ok(generate_corpus_traced(spec)?.into_iter().map(|(clip, _)| clip).collect())
}

/// Like [`generate_corpus`], also returning each clip's speaker latent `[T × LATENT_DIM]`.
pub fn generate_corpus_traced(spec: &CorpusSpec) -> Result<Vec<(ClipRecord<f64>, Tensor<f64>)>> {
    spec.validate()?;
    let root = RngState::new(spec.seed);
    let maps = Maps::draw(spec, &mut root.fork(0));
    let t_len = spec.frames;
    let max_lag = (spec.listener_lag_frames + MAX_LAG_JITTER).min(t_len - 1);
    let pre = max_lag;
    let mut clips = Vec::with_capacity(spec.num_clips);
    for c in 0..spec.num_clips {
        let mut rng = root.fork(1 + c as u64);
        let states = trajectory(t_len + pre, &maps, &mut rng);
        let speaker = &states[pre..];
        let noisy = |m: &[f64], rows: usize, rng: &mut RngState| -> Vec<f64> {
            speaker
                .iter()
                .flat_map(|s| mat_vec(m, rows, &s.latent))
                .map(|v| v + spec.noise_std * rng.normal())
                .collect()
        };
        let facial = Tensor::matrix(t_len, spec.facial_dim, noisy(&maps.facial, spec.facial_dim, &mut rng))?;
        let speech = Tensor::matrix(t_len, spec.speech_dim, noisy(&maps.speech, spec.speech_dim, &mut rng))?;
        let ef: Vec<f64> = speaker.iter().flat_map(|s| s.facial_emotion.clone()).collect();
        let es: Vec<f64> = speaker.iter().flat_map(|s| s.speech_emotion.clone()).collect();
        let emotion_facial = EmotionFeatures::new(EmotionSource::Facial, Tensor::matrix(t_len, FACIAL_EMOTION_DIM, ef)?)?;
        let emotion_speech = EmotionFeatures::new(EmotionSource::Speech, Tensor::matrix(t_len, 2 + NUM_EXPRESSIONS, es)?)?;

        let mut appropriate = Vec::with_capacity(spec.num_appropriate);
        for j in 0..spec.num_appropriate {
            let (amp, lag) = if j == 0 {
                (1.0, spec.listener_lag_frames)
            } else {
                let amp = rng.uniform_range(1.0 - AMPLITUDE_JITTER, 1.0 + AMPLITUDE_JITTER);
                let jitter = rng.index(2 * MAX_LAG_JITTER + 1) as i64 - MAX_LAG_JITTER as i64;
                let lag = (spec.listener_lag_frames as i64 + jitter).clamp(0, max_lag as i64) as usize;
                (amp, lag)
            };
            let gain = LISTENER_DAMPING * amp;
            let rows: Vec<f64> = (0..t_len).flat_map(|t| listener_row(&states[t + pre - lag], gain)).collect();
            appropriate.push(Tensor::matrix(t_len, LISTENER_DIM, rows)?);
        }
        let latent = Tensor::matrix(t_len, LATENT_DIM, speaker.iter().flat_map(|s| s.latent.clone()).collect())?;
        let clip = ClipRecord {
            id: format!("clip_{c:04}"),
            facial,
            speech,
            emotion_facial,
            emotion_speech,
            listener: appropriate[0].clone(),
            appropriate,
        };
        clips.push((clip, latent));
    }
    Ok(clips)
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Orders clips by id hash and cuts that order by `ratios` (train, val, test).
///
/// A partition with a positive ratio must receive at least one clip.
pub fn split_corpus<T: Clone>(clips: &[T], id: impl Fn(&T) -> &str, ratios: [f64; 3]) -> Result<Split<T>> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return invalid(format!("split ratios {ratios:?} must be non-negative and sum to 1"));
    }
    let mut order: Vec<usize> = (0..clips.len()).collect();
    order.sort_by_key(|&i| (id_hash(id(&clips[i])), i));
    let n = clips.len();
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let take = |r: std::ops::Range<usize>| r.map(|k| clips[order[k]].clone()).collect::<Vec<_>>();
    let split = Split {
        train: take(0..n_train),
        val: take(n_train..n_train + n_val),
        test: take(n_train + n_val..n),
    };
    for (name, part, ratio) in [("train", &split.train, ratios[0]), ("val", &split.val, ratios[1]), ("test", &split.test, ratios[2])] {
        if ratio > 0.0 && part.is_empty() {
            return Err(Error::Insufficient(format!("{name} partition is empty")));
        }
    }
    Ok(split)
}
