use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path} line {line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("bad magic in {0}: expected EMBS")]
    BadMagic(PathBuf),

    #[error("unsupported store version {found} in {path} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("store payload length mismatch in {path}: expected {expected} bytes, found {found}")]
    PayloadLength {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("id manifest {path} has {manifest} lines but the store header declares {header}")]
    CountMismatch {
        path: PathBuf,
        header: u64,
        manifest: usize,
    },

    #[error("embedding dimension must be positive")]
    ZeroDim,

    #[error("row {row} has {found} values, expected {expected}")]
    RaggedMatrix {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("{ids} ids given for {rows} vectors")]
    IdRowMismatch { ids: usize, rows: usize },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("invalid id {0:?}: ids must be non-empty and contain no line breaks")]
    InvalidId(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("zero-norm vector{}", .0.as_deref().map(|id| format!(" for {id:?}")).unwrap_or_default())]
    ZeroNorm(Option<String>),

    #[error("id {id:?} missing from {store} store")]
    MissingId { store: &'static str, id: String },

    #[error("no caption for image {0:?}")]
    MissingCaption(String),

    #[error("utterance id {0:?} is not of the form <dialogue_id>#<turn_index>")]
    BadUtteranceId(String),

    #[error("zero variance in {0} similarities")]
    ZeroVariance(&'static str),

    #[error("similarity population too small ({0} values, need at least 2)")]
    EmptyPopulation(u64),

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("candidate references unknown dialogue {0:?}")]
    DanglingDialogue(String),

    #[error("candidate references turn {turn_index} of dialogue {dialogue_id:?}, which has {turns} turns")]
    DanglingTurn {
        dialogue_id: String,
        turn_index: usize,
        turns: usize,
    },

    #[error("invalid dialogue {id:?}: {reason}")]
    InvalidDialogue { id: String, reason: String },

    #[error("query is empty after tokenization")]
    EmptyQuery,

    #[error("duplicate candidate id {0:?}")]
    DuplicateCandidate(String),

    #[error("document {0:?} is not in the index")]
    UnknownDocument(String),

    #[error("gold {gold:?} missing from the ranked candidates of instance {instance}")]
    GoldMissing { instance: usize, gold: String },

    #[error("{rankings} rankings given for {golds} golds")]
    RankingGoldMismatch { rankings: usize, golds: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed {what} at {path} line {line}")]
    Lexicon {
        what: &'static str,
        path: PathBuf,
        line: usize,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
