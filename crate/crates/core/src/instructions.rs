//! The closed instruction grammar: `<verb> the <color> <object>`.
//!
//! Two verbs, four colors and three object kinds give a task space of 24
//! instructions. Each instruction tokenizes to three content-word ids that
//! feed the transfer classifier's embedding table.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Size of the instruction space.
pub const NUM_INSTRUCTIONS: usize = 24;
/// Number of content tokens per instruction.
pub const TOKENS_PER_INSTRUCTION: usize = 3;
/// Embedding table size: nine content words plus one reserved id.
pub const VOCAB_SIZE: usize = 10;
/// Reserved padding / unknown id. Never produced by [`tokenize`].
pub const PAD_TOKEN: u8 = 9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InstructionError {
    #[error("malformed instruction at word {position}: {reason}")]
    MalformedInstruction { position: usize, reason: String },
    #[error("cannot draw {requested} distinct instructions from a population of {available}")]
    InsufficientPopulation { requested: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Goto,
    Pickup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Blue,
    Red,
    Green,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Box,
    Key,
    Ball,
}

impl Verb {
    pub const ALL: [Verb; 2] = [Verb::Goto, Verb::Pickup];

    pub fn word(self) -> &'static str {
        match self {
            Verb::Goto => "goto",
            Verb::Pickup => "pickup",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Blue, Color::Red, Color::Green, Color::Yellow];

    pub fn word(self) -> &'static str {
        match self {
            Color::Blue => "blue",
            Color::Red => "red",
            Color::Green => "green",
            Color::Yellow => "yellow",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn from_word(w: &str) -> Option<Self> {
        Color::ALL.into_iter().find(|c| c.word() == w)
    }
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 3] = [ObjectKind::Box, ObjectKind::Key, ObjectKind::Ball];

    pub fn word(self) -> &'static str {
        match self {
            ObjectKind::Box => "box",
            ObjectKind::Key => "key",
            ObjectKind::Ball => "ball",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn from_word(w: &str) -> Option<Self> {
        ObjectKind::ALL.into_iter().find(|o| o.word() == w)
    }
}

/// A (verb, color, object) task label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Instruction {
    pub verb: Verb,
    pub color: Color,
    pub object: ObjectKind,
}

impl Instruction {
    pub const fn new(verb: Verb, color: Color, object: ObjectKind) -> Self {
        Instruction {
            verb,
            color,
            object,
        }
    }

    /// Canonical lowercase surface form.
    pub fn render(&self) -> String {
        format!(
            "{} the {} {}",
            self.verb.word(),
            self.color.word(),
            self.object.word()
        )
    }

    pub fn tokens(&self) -> [u8; TOKENS_PER_INSTRUCTION] {
        tokenize(self)
    }

    /// Position of this instruction in [`enumerate_all`].
    pub fn ordinal(&self) -> usize {
        (self.verb.index() * Color::ALL.len() + self.color.index()) * ObjectKind::ALL.len()
            + self.object.index()
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for Instruction {
    type Err = InstructionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

impl Serialize for Instruction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for Instruction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse(&text).map_err(serde::de::Error::custom)
    }
}

fn malformed(position: usize, reason: impl Into<String>) -> InstructionError {
    InstructionError::MalformedInstruction {
        position,
        reason: reason.into(),
    }
}

/// Parses an instruction. Case-insensitive; accepts "go to" / "pick up" as
/// two-word verbs and treats the article "the" as optional.
pub fn parse(text: &str) -> Result<Instruction, InstructionError> {
    let lowered = text.to_lowercase();
    let words: Vec<&str> = lowered.split_whitespace().collect();
    let mut pos = 0;

    let verb = match words.first().copied() {
        None => return Err(malformed(0, "empty instruction")),
        Some("goto") => Verb::Goto,
        Some("pickup") => Verb::Pickup,
        Some("go") if words.get(1) == Some(&"to") => {
            pos += 1;
            Verb::Goto
        }
        Some("pick") if words.get(1) == Some(&"up") => {
            pos += 1;
            Verb::Pickup
        }
        Some(w) => return Err(malformed(0, format!("expected a verb, found '{w}'"))),
    };
    pos += 1;

    if words.get(pos) == Some(&"the") {
        pos += 1;
    }

    let color = match words.get(pos) {
        None => return Err(malformed(pos, "missing color")),
        Some(w) => Color::from_word(w)
            .ok_or_else(|| malformed(pos, format!("expected a color, found '{w}'")))?,
    };
    pos += 1;

    let object = match words.get(pos) {
        None => return Err(malformed(pos, "missing object")),
        Some(w) => ObjectKind::from_word(w)
            .ok_or_else(|| malformed(pos, format!("expected an object, found '{w}'")))?,
    };
    pos += 1;

    if let Some(w) = words.get(pos) {
        return Err(malformed(pos, format!("unexpected trailing word '{w}'")));
    }
    Ok(Instruction::new(verb, color, object))
}

pub fn render(instr: &Instruction) -> String {
    instr.render()
}

/// `[verb_id, color_id, object_id]`: verbs occupy ids 0-1, colors 2-5,
/// objects 6-8.
pub fn tokenize(instr: &Instruction) -> [u8; TOKENS_PER_INSTRUCTION] {
    [
        instr.verb.index() as u8,
        (2 + instr.color.index()) as u8,
        (6 + instr.object.index()) as u8,
    ]
}

/// Word-to-id table, in id order. The final slot is the reserved id.
pub fn token_table() -> Vec<(String, u8)> {
    let mut table: Vec<(String, u8)> = Verb::ALL
        .iter()
        .map(|v| v.word())
        .chain(Color::ALL.iter().map(|c| c.word()))
        .chain(ObjectKind::ALL.iter().map(|o| o.word()))
        .enumerate()
        .map(|(i, w)| (w.to_string(), i as u8))
        .collect();
    table.push(("<pad>".to_string(), PAD_TOKEN));
    table
}

/// All 24 instructions in lexicographic (verb, color, object) order.
pub fn enumerate_all() -> Vec<Instruction> {
    let mut out = Vec::with_capacity(NUM_INSTRUCTIONS);
    for verb in Verb::ALL {
        for color in Color::ALL {
            for object in ObjectKind::ALL {
                out.push(Instruction::new(verb, color, object));
            }
        }
    }
    out
}

/// Draws `m` distinct instructions uniformly without replacement from the
/// task space minus `exclude`.
pub fn sample_distinct<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    exclude: &BTreeSet<Instruction>,
) -> Result<Vec<Instruction>, InstructionError> {
    let mut pool: Vec<Instruction> = enumerate_all()
        .into_iter()
        .filter(|i| !exclude.contains(i))
        .collect();
    if m > pool.len() {
        return Err(InstructionError::InsufficientPopulation {
            requested: m,
            available: pool.len(),
        });
    }
    let (chosen, _) = pool.partial_shuffle(rng, m);
    Ok(chosen.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parses_surface_forms() {
        assert_eq!(
            parse("pickup the yellow box").unwrap(),
            Instruction::new(Verb::Pickup, Color::Yellow, ObjectKind::Box)
        );
        assert_eq!(
            parse("go to the blue ball").unwrap(),
            Instruction::new(Verb::Goto, Color::Blue, ObjectKind::Ball)
        );
        assert_eq!(
            parse("Pick Up RED key").unwrap(),
            Instruction::new(Verb::Pickup, Color::Red, ObjectKind::Key)
        );
        assert_eq!(
            parse("Goto the green key").unwrap().render(),
            "goto the green key"
        );
    }

    #[test]
    fn rejects_bad_text() {
        assert!(matches!(
            parse("paint the red wall"),
            Err(InstructionError::MalformedInstruction { position: 0, .. })
        ));
        assert!(matches!(
            parse("goto the red wall"),
            Err(InstructionError::MalformedInstruction { position: 3, .. })
        ));
        assert!(matches!(
            parse("goto the box red"),
            Err(InstructionError::MalformedInstruction { position: 2, .. })
        ));
        assert!(matches!(
            parse("goto the red"),
            Err(InstructionError::MalformedInstruction { position: 3, .. })
        ));
        assert!(parse("").is_err());
        assert!(parse("go the red box").is_err());
        assert!(parse("goto the red box now").is_err());
    }

    #[test]
    fn render_matches_table_forms() {
        assert_eq!(
            Instruction::new(Verb::Goto, Color::Yellow, ObjectKind::Box).render(),
            "goto the yellow box"
        );
        assert_eq!(
            Instruction::new(Verb::Pickup, Color::Red, ObjectKind::Ball).render(),
            "pickup the red ball"
        );
    }

    #[test]
    fn roundtrip_and_tokens_over_all() {
        let all = enumerate_all();
        assert_eq!(all.len(), NUM_INSTRUCTIONS);
        assert_eq!(all[0], Instruction::new(Verb::Goto, Color::Blue, ObjectKind::Box));
        let mut seen_tokens = BTreeSet::new();
        for (i, instr) in all.iter().enumerate() {
            assert_eq!(parse(&instr.render()).unwrap(), *instr);
            assert_eq!(instr.ordinal(), i);
            let t = tokenize(instr);
            assert!(t.iter().all(|&id| id < PAD_TOKEN));
            assert!(seen_tokens.insert(t));
        }
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        let rendered: BTreeSet<String> = all.iter().map(|i| i.render()).collect();
        let mut product = BTreeSet::new();
        for v in ["goto", "pickup"] {
            for c in ["blue", "red", "green", "yellow"] {
                for o in ["box", "key", "ball"] {
                    product.insert(format!("{v} the {c} {o}"));
                }
            }
        }
        assert_eq!(rendered, product);
    }

    #[test]
    fn token_ids() {
        assert_eq!(
            tokenize(&Instruction::new(Verb::Goto, Color::Blue, ObjectKind::Ball)),
            [0, 2, 8]
        );
        assert_eq!(
            tokenize(&Instruction::new(Verb::Pickup, Color::Yellow, ObjectKind::Box)),
            [1, 5, 6]
        );
        let table = token_table();
        assert_eq!(table.len(), VOCAB_SIZE);
        for (i, (_, id)) in table.iter().enumerate() {
            assert_eq!(*id as usize, i);
        }
    }

    #[test]
    fn sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut perm = sample_distinct(&mut rng, 24, &BTreeSet::new()).unwrap();
        perm.sort();
        assert_eq!(perm, enumerate_all());

        assert_eq!(
            sample_distinct(&mut rng, 25, &BTreeSet::new()),
            Err(InstructionError::InsufficientPopulation {
                requested: 25,
                available: 24
            })
        );

        let a = sample_distinct(&mut ChaCha8Rng::seed_from_u64(3), 8, &BTreeSet::new()).unwrap();
        let b = sample_distinct(&mut ChaCha8Rng::seed_from_u64(3), 8, &BTreeSet::new()).unwrap();
        assert_eq!(a, b);

        let exclude: BTreeSet<_> = a.iter().copied().collect();
        assert!(sample_distinct(&mut rng, 17, &exclude).is_err());
        let rest = sample_distinct(&mut rng, 16, &exclude).unwrap();
        assert!(rest.iter().all(|i| !exclude.contains(i)));
    }

    #[test]
    fn serde_uses_canonical_text() {
        let i = Instruction::new(Verb::Goto, Color::Green, ObjectKind::Key);
        let json = serde_json::to_string(&i).unwrap();
        assert_eq!(json, "\"goto the green key\"");
        let back: Instruction = serde_json::from_str("\"go to the green key\"").unwrap();
        assert_eq!(back, i);
    }
}
