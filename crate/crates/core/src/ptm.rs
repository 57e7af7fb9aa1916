//! Embedding-width contract for the supported speech models, shared with the
//! offline extractor that produces MIOE corpora from audio.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean over time of the last hidden state.
    MeanLastHidden,
    /// Mean over time of the encoder output (decoder discarded).
    EncoderMean,
    /// The model's own utterance-level speaker embedding.
    SpeakerEmbedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PtmSpec {
    pub ptm_id: &'static str,
    pub display_name: &'static str,
    pub model_id: &'static str,
    pub dim: usize,
    pub pooling: Pooling,
}

pub const PTM_SPECS: [PtmSpec; 9] = [
    PtmSpec {
        ptm_id: "xls-r",
        display_name: "XLS-R",
        model_id: "facebook/wav2vec2-xls-r-1b",
        dim: 1280,
        pooling: Pooling::MeanLastHidden,
    },
    PtmSpec {
        ptm_id: "whisper",
        display_name: "Whisper",
        model_id: "openai/whisper-base",
        dim: 512,
        pooling: Pooling::EncoderMean,
    },
    PtmSpec {
        ptm_id: "mms",
        display_name: "MMS",
        model_id: "facebook/mms-1b",
        dim: 1280,
        pooling: Pooling::MeanLastHidden,
    },
    PtmSpec {
        ptm_id: "unispeech-sat",
        display_name: "Unispeech-SAT",
        model_id: "microsoft/unispeech-sat-base",
        dim: 768,
        pooling: Pooling::MeanLastHidden,
    },
    PtmSpec {
        ptm_id: "wavlm-base",
        display_name: "WavLM (Base)",
        model_id: "microsoft/wavlm-base",
        dim: 768,
        pooling: Pooling::MeanLastHidden,
    },
    PtmSpec {
        ptm_id: "wavlm-large",
        display_name: "WavLM (Large)",
        model_id: "microsoft/wavlm-large",
        dim: 1024,
        pooling: Pooling::MeanLastHidden,
    },
    PtmSpec {
        ptm_id: "wav2vec2",
        display_name: "Wav2Vec2",
        model_id: "facebook/wav2vec2-base",
        dim: 768,
        pooling: Pooling::MeanLastHidden,
    },
    PtmSpec {
        ptm_id: "x-vector",
        display_name: "x-vector",
        model_id: "speechbrain/spkrec-xvect-voxceleb",
        dim: 512,
        pooling: Pooling::SpeakerEmbedding,
    },
    PtmSpec {
        ptm_id: "xlsr-emo",
        display_name: "XLSR_emo",
        model_id: "CAiRE/SER-wav2vec2-large-xlsr-53-eng-zho-all-age",
        dim: 1024,
        pooling: Pooling::MeanLastHidden,
    },
];

pub fn ptm_spec(ptm_id: &str) -> Option<&'static PtmSpec> {
    PTM_SPECS.iter().find(|s| s.ptm_id == ptm_id)
}

/// Table label for a PTM id; unknown ids (synthetic stand-ins, PCA-suffixed
/// ids) are shown verbatim.
pub fn display_name(ptm_id: &str) -> &str {
    ptm_spec(ptm_id).map_or(ptm_id, |s| s.display_name)
}

/// Checks a corpus width against the contract; unknown ids pass.
pub fn check_dim(ptm_id: &str, dim: usize) -> Result<(), String> {
    match ptm_spec(ptm_id) {
        Some(spec) if spec.dim != dim => Err(format!(
            "{} embeddings must be {}-dimensional, found {dim}",
            spec.display_name, spec.dim
        )),
        _ => Ok(()),
    }
}
