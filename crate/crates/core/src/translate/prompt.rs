use crate::protect::MaskedText;

pub const PROMPT_TEMPLATE: &str = include_str!("../../data/translation_prompt.txt");

/// Last line of the instructions; everything after it is the payload.
pub const PAYLOAD_MARKER: &str = "Now, translate the following text:\n";

pub fn build_prompt(masked: &MaskedText) -> String {
    let mut prompt = String::with_capacity(PROMPT_TEMPLATE.len() + masked.template.len());
    prompt.push_str(PROMPT_TEMPLATE);
    prompt.push_str(&masked.template);
    prompt
}

/// The masked text a prompt carries, if it was built by [`build_prompt`].
pub fn payload(prompt: &str) -> Option<&str> {
    prompt.strip_prefix(PROMPT_TEMPLATE)
}
