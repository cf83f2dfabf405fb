//! Document–summary ingestion: tokenization, vocabulary construction,
//! partitioning a document among encoder agents, and per-example extended
//! vocabularies for copying out-of-vocabulary source words.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DcaError, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;
pub const SENT_END: usize = 4;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const SOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const SENT_END_TOKEN: &str = ".";

pub const RESERVED: [&str; 5] = [PAD_TOKEN, UNK_TOKEN, SOS_TOKEN, EOS_TOKEN, SENT_END_TOKEN];

/// Lowercases and splits on any run of whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub document: Vec<String>,
    pub summary: String,
}

impl Example {
    /// Paragraphs split into sentences; a sentence ends after each "." and
    /// at the end of its paragraph.
    pub fn sentences(&self) -> Vec<Vec<Vec<String>>> {
        self.document.iter().map(|p| split_sentences(&tokenize(p))).collect()
    }

    pub fn summary_tokens(&self) -> Vec<String> {
        tokenize(&self.summary)
    }
}

/// Splits a token run into sentences terminated by ".". A trailing run
/// without a terminator is its own sentence.
pub fn split_sentences<T: AsRef<str> + Clone>(tokens: &[T]) -> Vec<Vec<T>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for t in tokens {
        cur.push(t.clone());
        if t.as_ref() == SENT_END_TOKEN {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens first, then the `size − 5` most frequent document and
    /// summary tokens; equal counts are ordered lexicographically.
    pub fn build(examples: &[Example], size: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(DcaError::EmptyCorpus);
        }
        if size < RESERVED.len() {
            return Err(DcaError::Argument(format!(
                "vocabulary size {size} is smaller than the {} reserved tokens",
                RESERVED.len()
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for ex in examples {
            let doc = ex.document.iter().flat_map(|p| tokenize(p));
            for tok in doc.chain(tokenize(&ex.summary)) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(size - RESERVED.len()).map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(DcaError::Config(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(DcaError::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or UNK.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for t in &self.tokens {
            writeln!(f, "{t}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Base vocabulary extended with the out-of-vocabulary tokens of one
/// example's source, numbered `V..V+O−1` in order of first appearance.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExtendedVocab {
    base_len: usize,
    oov: Vec<String>,
    index: HashMap<String, usize>,
}

impl ExtendedVocab {
    pub fn new(base_len: usize) -> Self {
        ExtendedVocab {
            base_len,
            ..Default::default()
        }
    }

    pub fn base_len(&self) -> usize {
        self.base_len
    }

    pub fn len(&self) -> usize {
        self.base_len + self.oov.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn oov_tokens(&self) -> &[String] {
        &self.oov
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    fn intern(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.base_len + self.oov.len();
        self.oov.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Surface string of an extended id.
    pub fn token<'a>(&'a self, id: usize, vocab: &'a Vocabulary) -> &'a str {
        if id < self.base_len {
            vocab.token(id).unwrap_or(UNK_TOKEN)
        } else {
            self.oov
                .get(id - self.base_len)
                .map(String::as_str)
                .unwrap_or(UNK_TOKEN)
        }
    }

    pub fn detokenize(&self, ids: &[usize], vocab: &Vocabulary) -> Vec<String> {
        ids.iter().map(|&i| self.token(i, vocab).to_string()).collect()
    }
}

/// Maps source tokens to extended ids, creating a fresh extended id for
/// every distinct out-of-vocabulary token.
pub fn encode_extended<T: AsRef<str>>(tokens: &[T], vocab: &Vocabulary) -> (Vec<usize>, ExtendedVocab) {
    let mut ext = ExtendedVocab::new(vocab.len());
    let ids = encode_source_into(tokens, vocab, &mut ext);
    (ids, ext)
}

fn encode_source_into<T: AsRef<str>>(tokens: &[T], vocab: &Vocabulary, ext: &mut ExtendedVocab) -> Vec<usize> {
    tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            vocab.get(t).unwrap_or_else(|| ext.intern(t))
        })
        .collect()
}

/// Maps summary tokens through an already-built extended vocabulary;
/// tokens found in neither map to UNK.
pub fn encode_target<T: AsRef<str>>(tokens: &[T], vocab: &Vocabulary, ext: &ExtendedVocab) -> Vec<usize> {
    tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            vocab.get(t).or_else(|| ext.get(t)).unwrap_or(UNK)
        })
        .collect()
}

/// Greedy sentence-preserving assignment of a document to `agents` slots of
/// at most `per_agent_limit` tokens each.
///
/// A sentence moves to the next agent rather than being split, unless it is
/// longer than the limit on its own (then it is cut to the limit). The last
/// agent is filled to capacity and the remainder is dropped. Agents left
/// empty receive a single UNK token.
pub fn partition(paragraphs: &[Vec<Vec<String>>], agents: usize, per_agent_limit: usize) -> Vec<Vec<String>> {
    assert!(
        agents >= 1 && per_agent_limit >= 1,
        "partition needs at least one agent and one token"
    );
    let mut out: Vec<Vec<String>> = vec![Vec::new(); agents];
    let mut a = 0;
    'outer: for sentence in paragraphs.iter().flatten() {
        if sentence.is_empty() {
            continue;
        }
        loop {
            let room = per_agent_limit - out[a].len();
            let last = a + 1 == agents;
            if sentence.len() <= room {
                out[a].extend(sentence.iter().cloned());
                if out[a].len() == per_agent_limit {
                    if last {
                        break 'outer;
                    }
                    a += 1;
                }
                break;
            }
            if last {
                out[a].extend(sentence.iter().take(room).cloned());
                break 'outer;
            }
            if sentence.len() > per_agent_limit && out[a].is_empty() {
                out[a].extend(sentence.iter().take(per_agent_limit).cloned());
                a += 1;
                break;
            }
            a += 1;
        }
    }
    for slot in &mut out {
        if slot.is_empty() {
            slot.push(UNK_TOKEN.to_string());
        }
    }
    out
}

/// One agent's slice of the source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentInput {
    pub index: usize,
    /// Extended ids, `PAD` at masked positions.
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub tokens: Vec<String>,
}

impl AgentInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Pads to `len` with masked PAD positions.
    pub fn padded(mut self, len: usize) -> Self {
        while self.ids.len() < len {
            self.ids.push(PAD);
            self.mask.push(false);
            self.tokens.push(PAD_TOKEN.to_string());
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreparedExample {
    pub id: String,
    pub agents: Vec<AgentInput>,
    /// Extended target ids, EOS-terminated.
    pub target: Vec<usize>,
    pub ext: ExtendedVocab,
    /// Reference summary tokens used for scoring.
    pub reference: Vec<String>,
}

impl PreparedExample {
    pub fn extended_len(&self) -> usize {
        self.ext.len()
    }
}

/// Tokenizes, partitions and encodes one example. The target keeps at most
/// `max_target − 1` summary tokens followed by EOS.
pub fn prepare(
    example: &Example,
    vocab: &Vocabulary,
    agents: usize,
    per_agent_limit: usize,
    max_target: usize,
) -> PreparedExample {
    let parts = partition(&example.sentences(), agents, per_agent_limit);
    prepare_from_parts(&example.id, parts, &example.summary_tokens(), vocab, max_target)
}

pub fn prepare_from_parts(
    id: &str,
    parts: Vec<Vec<String>>,
    summary: &[String],
    vocab: &Vocabulary,
    max_target: usize,
) -> PreparedExample {
    let mut ext = ExtendedVocab::new(vocab.len());
    let agents = parts
        .into_iter()
        .enumerate()
        .map(|(index, tokens)| AgentInput {
            index,
            ids: encode_source_into(&tokens, vocab, &mut ext),
            mask: vec![true; tokens.len()],
            tokens,
        })
        .collect();
    let keep = max_target.saturating_sub(1).min(summary.len());
    let mut target = encode_target(&summary[..keep], vocab, &ext);
    target.push(EOS);
    PreparedExample {
        id: id.to_string(),
        agents,
        target,
        ext,
        reference: summary.to_vec(),
    }
}

#[derive(Deserialize)]
struct RawExample {
    id: Option<String>,
    document: Option<Vec<String>>,
    summary: Option<String>,
}

/// Reads one JSON object per line: `{"id", "document": [..], "summary"}`.
/// Blank lines are skipped.
pub fn load_jsonl(path: &Path) -> Result<Vec<Example>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| DcaError::Schema { line: line_no, message };
        let raw: RawExample = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        let id = raw.id.ok_or_else(|| schema("missing field \"id\"".into()))?;
        let document = raw
            .document
            .ok_or_else(|| schema("missing field \"document\"".into()))?;
        let summary = raw.summary.ok_or_else(|| schema("missing field \"summary\"".into()))?;
        if document.is_empty() {
            return Err(schema("empty document".into()));
        }
        if summary.trim().is_empty() {
            return Err(schema("empty summary".into()));
        }
        out.push(Example { id, document, summary });
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut f, ex)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(words: &str) -> Vec<String> {
        tokenize(words)
    }

    fn ex(id: &str, doc: &[&str], summary: &str) -> Example {
        Example {
            id: id.into(),
            document: doc.iter().map(|d| d.to_string()).collect(),
            summary: summary.into(),
        }
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Abbey Clancy ."), vec!["abbey", "clancy", "."]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("A  b\tc"), vec!["a", "b", "c"]);
    }

    #[test]
    fn build_vocab_orders_by_frequency() {
        let v = Vocabulary::build(&[ex("1", &["a a b"], "a")], 7).unwrap();
        assert_eq!(&v.tokens()[..5], &RESERVED.map(String::from));
        assert_eq!(v.get("a"), Some(5));
        assert_eq!(v.get("b"), Some(6));
        assert_eq!(v.len(), 7);
    }

    #[test]
    fn build_vocab_reserved_only_maps_everything_to_unk() {
        let v = Vocabulary::build(&[ex("1", &["a a b"], "b")], 5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), UNK);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.id("."), SENT_END);
    }

    #[test]
    fn build_vocab_breaks_ties_lexicographically() {
        let v = Vocabulary::build(&[ex("1", &["y x"], "z z")], 7).unwrap();
        // z appears twice; x and y once each
        assert_eq!(v.get("z"), Some(5));
        assert_eq!(v.get("x"), Some(6));
        assert_eq!(v.get("y"), None);
    }

    #[test]
    fn build_vocab_errors() {
        assert!(matches!(Vocabulary::build(&[], 10), Err(DcaError::EmptyCorpus)));
        assert!(matches!(
            Vocabulary::build(&[ex("1", &["a"], "a")], 4),
            Err(DcaError::Argument(_))
        ));
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let v = Vocabulary::build(&[ex("1", &["q w e r t y"], "q")], 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<pad>\n<unk>\n<s>\n</s>\n.\n"));
        assert_eq!(Vocabulary::load(&path).unwrap(), v);
    }

    #[test]
    fn partition_examples() {
        let doc = vec![vec![s("a b c d e ."), s("f g h i j .")]];
        let parts = partition(&doc, 2, 6);
        assert_eq!(parts, vec![s("a b c d e ."), s("f g h i j .")]);

        let parts = partition(&doc, 1, 4);
        assert_eq!(parts, vec![s("a b c d")]);

        // a short document leaves later agents with a lone UNK
        let parts = partition(&[vec![s("a b .")]], 3, 6);
        assert_eq!(
            parts,
            vec![s("a b ."), vec![UNK_TOKEN.to_string()], vec![UNK_TOKEN.to_string()]]
        );
    }

    #[test]
    fn partition_truncates_only_oversized_sentences() {
        let doc = vec![vec![s("a ."), s("b c d e f g h ."), s("i .")]];
        let parts = partition(&doc, 3, 4);
        assert_eq!(parts, vec![s("a ."), s("b c d e"), s("i .")]);
    }

    #[test]
    fn encode_extended_examples() {
        let v = Vocabulary::build(&[ex("1", &["a"], "a")], 6).unwrap();
        let (ids, ext) = encode_extended(&s("a zzz"), &v);
        assert_eq!(ids, vec![v.id("a"), 6]);
        assert_eq!(ext.oov_tokens(), &["zzz".to_string()]);

        let (ids, ext) = encode_extended(&s("zzz zzz"), &v);
        assert_eq!(ids, vec![6, 6]);
        assert_eq!(ext.len(), 7);

        let target = encode_target(&s("zzz qqq a"), &v, &ext);
        assert_eq!(target, vec![6, UNK, v.id("a")]);
    }

    #[test]
    fn prepare_builds_copy_targets() {
        let v = Vocabulary::build(&[ex("1", &["the cat ."], "the cat .")], 8).unwrap();
        let e = ex("x", &["the tokyo cat .", "more words ."], "tokyo cat .");
        let p = prepare(&e, &v, 2, 4, 100);
        assert_eq!(p.agents.len(), 2);
        assert_eq!(p.agents[0].tokens, s("the tokyo cat ."));
        let tokyo = p.ext.get("tokyo").unwrap();
        assert!(tokyo >= v.len());
        assert_eq!(p.target, vec![tokyo, v.id("cat"), SENT_END, EOS]);
        assert!(p.target.iter().all(|&t| t < p.extended_len()));

        let short = prepare(&e, &v, 2, 4, 2);
        assert_eq!(short.target, vec![tokyo, EOS]);
    }

    #[test]
    fn load_jsonl_examples() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.jsonl");
        std::fs::write(&good, "{\"id\":\"1\",\"document\":[\"a b\"],\"summary\":\"a\"}\n").unwrap();
        let exs = load_jsonl(&good).unwrap();
        assert_eq!(exs, vec![ex("1", &["a b"], "a")]);

        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        assert!(load_jsonl(&empty).unwrap().is_empty());

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(
            &bad,
            "{\"id\":\"1\",\"document\":[\"a b\"],\"summary\":\"a\"}\n{\"id\":\"2\",\"document\":[\"c\"]}\n",
        )
        .unwrap();
        match load_jsonl(&bad) {
            Err(DcaError::Schema { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("summary"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }

        assert!(matches!(
            load_jsonl(&dir.path().join("missing.jsonl")),
            Err(DcaError::Io(_))
        ));
    }

    fn word() -> impl Strategy<Value = String> {
        "[a-z]{1,4}|\\.".prop_map(|w| w)
    }

    proptest! {
        #[test]
        fn extended_round_trip_reproduces_normalized_text(words in prop::collection::vec(word(), 0..20), seps in prop::collection::vec("[ \t]{1,3}", 20)) {
            let text: String = words.iter().zip(&seps).map(|(w, s)| format!("{w}{s}")).collect::<String>().to_uppercase();
            let corpus = [ex("1", &["aa b c ."], "b")];
            let v = Vocabulary::build(&corpus, 8).unwrap();
            let toks = tokenize(&text);
            let (ids, ext) = encode_extended(&toks, &v);
            prop_assert_eq!(ext.detokenize(&ids, &v).join(" "), words.join(" "));
            // extended ids form a contiguous block V..V+O−1
            let mut oov_ids: Vec<usize> = ids.iter().copied().filter(|&i| i >= v.len()).collect();
            oov_ids.sort();
            oov_ids.dedup();
            prop_assert_eq!(oov_ids, (v.len()..ext.len()).collect::<Vec<_>>());
        }

        #[test]
        fn partition_preserves_order_and_sentences(
            lens in prop::collection::vec(1usize..9, 1..12),
            agents in 1usize..5,
            limit in 1usize..12,
        ) {
            let mut counter = 0;
            let sentences: Vec<Vec<String>> = lens.iter().map(|&l| {
                let mut sent: Vec<String> = (0..l - 1).map(|_| { counter += 1; format!("w{counter}") }).collect();
                sent.push(".".into());
                sent
            }).collect();
            let flat: Vec<String> = sentences.iter().flatten().cloned().collect();
            let parts = partition(std::slice::from_ref(&sentences), agents, limit);
            prop_assert_eq!(parts.len(), agents);
            let mut pos = 0;
            for part in &parts {
                prop_assert!(!part.is_empty() && part.len() <= limit);
                for tok in part.iter().filter(|t| t.as_str() != UNK_TOKEN) {
                    let found = flat[pos..].iter().position(|t| t == tok);
                    prop_assert!(found.is_some());
                    pos += found.unwrap() + 1;
                }
            }
            // a sentence that fits within the limit is never spread over two agents
            for sent in sentences.iter().filter(|s| s.len() <= limit) {
                let owners: Vec<usize> = parts.iter().enumerate()
                    .filter(|(_, p)| sent.iter().filter(|t| t.as_str() != ".").any(|t| p.contains(t)))
                    .map(|(i, _)| i)
                    .collect();
                prop_assert!(owners.len() <= 1, "sentence {:?} split over {:?}", sent, owners);
            }
        }
    }
}
