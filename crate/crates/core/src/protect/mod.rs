//! Translation-safe segmentation and reversible placeholder masking.
//!
//! `segment` tiles a message into [`Segment`]s; `mask` swaps every preserved
//! segment for a `⟦P-nnnn⟧` placeholder, and `unmask` puts the originals
//! back after translation. Literal `⟦`/`⟧` characters in the source are
//! themselves preserved, so templates never contain ambiguous placeholders.

mod code;
mod glossary;
mod mask;
mod segment;

pub use code::{split_code_block, CodeBlockView, CodeLine, CodeLineKind};
pub use glossary::{GlossaryEntry, GlossaryError, TermGlossary, TermMode, DEFAULT_GLOSSARY};
pub use mask::{
    apply_glossary, check_placeholders, mask, placeholder_counts, strip_placeholders, unmask,
    MaskedText, PlaceholderId, Substitution, UnmaskError,
};
pub use segment::{preserved_bytes, segment, Segment, SegmentKind, PLACEHOLDER_CLOSE, PLACEHOLDER_OPEN};

#[allow(unused_imports)]
pub(crate) use glossary::hex;
