//! Prompt templates.
//!
//! Text form: whitespace separated items where `{x}` is the input text,
//! `{soft}` one soft token, `{soft:k}` k consecutive soft tokens, `[MASK]`
//! the prediction slot and every other item an anchor word looked up in the
//! vocabulary (special tokens such as `[CLS]` included). Example:
//!
//! ```text
//! [CLS] {x} {soft:3} the topic is [MASK] . [SEP]
//! ```
//!
//! Soft token indices are assigned left to right, so
//! `parse(render_text(t)) == t` for every valid template.

use serde::{Deserialize, Serialize};

use super::vocab::Vocab;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    InputText,
    SoftToken(usize),
    AnchorToken(usize),
    MaskToken,
}

/// Where a position of a rendered sequence takes its embedding from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Row of the token embedding table (input words, anchors, `[MASK]`).
    Token(usize),
    /// Row of the encoded soft prompt matrix.
    Soft(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub sources: Vec<Source>,
    pub mask_pos: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    slots: Vec<Slot>,
}

impl PromptTemplate {
    pub fn new(slots: Vec<Slot>) -> Result<Self> {
        let masks = slots.iter().filter(|s| matches!(s, Slot::MaskToken)).count();
        let inputs = slots.iter().filter(|s| matches!(s, Slot::InputText)).count();
        if masks != 1 {
            return Err(Error::contract(format!("template needs exactly one [MASK], found {masks}")));
        }
        if inputs != 1 {
            return Err(Error::contract(format!("template needs exactly one {{x}}, found {inputs}")));
        }
        let soft: Vec<usize> = slots
            .iter()
            .filter_map(|s| match s {
                Slot::SoftToken(i) => Some(*i),
                _ => None,
            })
            .collect();
        if soft.iter().enumerate().any(|(k, &i)| k != i) {
            return Err(Error::contract("soft token indices must be 0..m-1 in order"));
        }
        Ok(PromptTemplate { slots })
    }

    pub fn parse(text: &str, vocab: &Vocab) -> Result<Self> {
        let mut slots = Vec::new();
        let mut soft = 0;
        for item in text.split_whitespace() {
            match item {
                "{x}" => slots.push(Slot::InputText),
                "[MASK]" => slots.push(Slot::MaskToken),
                "{soft}" => {
                    slots.push(Slot::SoftToken(soft));
                    soft += 1;
                }
                _ if item.starts_with("{soft:") && item.ends_with('}') => {
                    let k: usize = item[6..item.len() - 1]
                        .parse()
                        .map_err(|_| Error::contract(format!("bad soft token count in `{item}`")))?;
                    if k == 0 {
                        return Err(Error::contract("`{soft:0}` is not allowed"));
                    }
                    for _ in 0..k {
                        slots.push(Slot::SoftToken(soft));
                        soft += 1;
                    }
                }
                _ if item.starts_with('{') => {
                    return Err(Error::contract(format!("unknown template directive `{item}`")));
                }
                word => {
                    let id = vocab
                        .id(word)
                        .ok_or_else(|| Error::contract(format!("anchor `{word}` is not in the vocabulary")))?;
                    slots.push(Slot::AnchorToken(id));
                }
            }
        }
        Self::new(slots)
    }

    /// Canonical text form; soft runs are written as `{soft:k}`.
    pub fn to_text(&self, vocab: &Vocab) -> String {
        let mut items: Vec<String> = Vec::new();
        let mut run = 0;
        let flush = |items: &mut Vec<String>, run: &mut usize| {
            match *run {
                0 => {}
                1 => items.push("{soft}".into()),
                k => items.push(format!("{{soft:{k}}}")),
            }
            *run = 0;
        };
        for slot in &self.slots {
            match slot {
                Slot::SoftToken(_) => {
                    run += 1;
                    continue;
                }
                _ => flush(&mut items, &mut run),
            }
            items.push(match slot {
                Slot::InputText => "{x}".into(),
                Slot::MaskToken => "[MASK]".into(),
                Slot::AnchorToken(id) => vocab.token(*id).unwrap_or("[UNK]").to_string(),
                Slot::SoftToken(_) => unreachable!(),
            });
        }
        flush(&mut items, &mut run);
        items.join(" ")
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn soft_count(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| matches!(s, Slot::SoftToken(_)))
            .count()
    }

    /// Index of the `[MASK]` slot within the template.
    pub fn mask_slot(&self) -> usize {
        self.slots
            .iter()
            .position(|s| matches!(s, Slot::MaskToken))
            .expect("validated template has a mask")
    }

    /// Number of positions the template occupies besides the input text.
    pub fn fixed_len(&self) -> usize {
        self.slots.len() - 1
    }

    /// Expands the template around `text`. Input text longer than the
    /// remaining budget of `max_len` positions is truncated from the right.
    pub fn render(&self, text: &[usize], max_len: usize) -> Result<Rendered> {
        if text.is_empty() {
            return Err(Error::contract("cannot render an empty text"));
        }
        let budget = max_len
            .checked_sub(self.fixed_len())
            .filter(|&b| b > 0)
            .ok_or_else(|| {
                Error::contract(format!(
                    "template needs {} fixed positions, max sequence length is {max_len}",
                    self.fixed_len()
                ))
            })?;
        let text = &text[..text.len().min(budget)];
        let mut sources = Vec::with_capacity(self.fixed_len() + text.len());
        let mut mask_pos = 0;
        for slot in &self.slots {
            match *slot {
                Slot::InputText => sources.extend(text.iter().map(|&t| Source::Token(t))),
                Slot::SoftToken(i) => sources.push(Source::Soft(i)),
                Slot::AnchorToken(id) => sources.push(Source::Token(id)),
                Slot::MaskToken => {
                    mask_pos = sources.len();
                    sources.push(Source::Token(Vocab::MASK_ID));
                }
            }
        }
        Ok(Rendered { sources, mask_pos })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Vocab {
        let mut v = Vocab::new();
        for w in ["the", "topic", "is", "rates", "rise", ".", "about"] {
            v.insert(w);
        }
        v
    }

    #[test]
    fn cloze_template_layout() {
        let v = vocab();
        let t = PromptTemplate::parse("[CLS] {x} the topic is [MASK] [SEP]", &v).unwrap();
        assert_eq!(t.slots().len(), 7);
        assert_eq!(t.mask_slot(), 5);
        let x = v.encode("rates rise");
        let r = t.render(&x, 64).unwrap();
        assert_eq!(r.sources.len(), 8);
        assert_eq!(r.mask_pos, 6);
        assert_eq!(r.sources[r.mask_pos], Source::Token(Vocab::MASK_ID));
        assert_eq!(&r.sources[1..3], &[Source::Token(x[0]), Source::Token(x[1])]);
    }

    #[test]
    fn minimal_template_adds_two_positions() {
        let v = vocab();
        let t = PromptTemplate::parse("[CLS] {x} [MASK]", &v).unwrap();
        let x = v.encode("rates rise rates");
        assert_eq!(t.render(&x, 64).unwrap().sources.len(), x.len() + 2);
    }

    #[test]
    fn soft_positions_are_counted() {
        let v = vocab();
        let t = PromptTemplate::parse("{x} {soft:3} [MASK]", &v).unwrap();
        let r = t.render(&[5], 16).unwrap();
        let soft = r.sources.iter().filter(|s| matches!(s, Source::Soft(_))).count();
        assert_eq!(soft, 3);
        assert_eq!(t.soft_count(), 3);
    }

    #[test]
    fn overflow_truncates_input_from_the_right() {
        let v = vocab();
        let t = PromptTemplate::parse("[CLS] {x} {soft:2} [MASK] [SEP]", &v).unwrap();
        let text: Vec<usize> = (5..25).collect();
        let r = t.render(&text, 10).unwrap();
        assert_eq!(r.sources.len(), 10);
        assert_eq!(r.sources[1], Source::Token(5));
        assert_eq!(r.sources[5], Source::Token(9));
        assert_eq!(r.mask_pos, 8);
    }

    #[test]
    fn invalid_templates_are_rejected() {
        let v = vocab();
        assert!(PromptTemplate::parse("{x} the topic", &v).is_err());
        assert!(PromptTemplate::parse("{x} [MASK] [MASK]", &v).is_err());
        assert!(PromptTemplate::parse("[MASK] the", &v).is_err());
        assert!(PromptTemplate::parse("{x} unknownword [MASK]", &v).is_err());
        assert!(PromptTemplate::parse("{x} {soft:0} [MASK]", &v).is_err());
        assert!(PromptTemplate::new(vec![Slot::InputText, Slot::SoftToken(1), Slot::MaskToken]).is_err());
        let t = PromptTemplate::parse("{x} [MASK]", &v).unwrap();
        assert!(t.render(&[], 8).is_err());
    }

    fn arb_template() -> impl Strategy<Value = Vec<u8>> {
        // 0 = anchor, 1 = soft, positions for {x} and [MASK] inserted below
        prop::collection::vec(0u8..2, 0..8)
    }

    proptest! {
        #[test]
        fn text_form_round_trips(body in arb_template(), xpos in 0usize..9, mpos in 0usize..10) {
            let v = vocab();
            let mut slots = Vec::new();
            let mut soft = 0;
            for b in body {
                if b == 0 {
                    slots.push(Slot::AnchorToken(v.id("topic").unwrap()));
                } else {
                    slots.push(Slot::SoftToken(soft));
                    soft += 1;
                }
            }
            slots.insert(xpos.min(slots.len()), Slot::InputText);
            slots.insert(mpos.min(slots.len()), Slot::MaskToken);
            // Soft indices must follow textual order after insertion.
            let mut k = 0;
            for s in slots.iter_mut() {
                if let Slot::SoftToken(i) = s {
                    *i = k;
                    k += 1;
                }
            }
            let t = PromptTemplate::new(slots).unwrap();
            let back = PromptTemplate::parse(&t.to_text(&v), &v).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
