//! Alphabets and terminal-free token sequences.
//!
//! Tokens are stored as small integer codes. Code `0` is reserved for the
//! terminal symbol (and for padding past the end of a sequence); the
//! non-terminal symbols of an alphabet take codes `1..=n` in declaration
//! order.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Code used for the terminal symbol and for padding.
pub const TERMINAL_CODE: u16 = 0;

/// A finite, ordered set of tokens with an optional terminal symbol.
#[derive(Debug, Clone)]
pub struct Alphabet {
    tokens: Vec<String>,
    terminal: Option<String>,
    index: HashMap<String, u16>,
}

impl PartialEq for Alphabet {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.terminal == other.terminal
    }
}

impl Eq for Alphabet {}

impl Alphabet {
    /// Builds an alphabet from its symbols. When `terminal` is given it must
    /// be one of `symbols`; it is removed from the token set.
    pub fn new<S: AsRef<str>>(symbols: &[S], terminal: Option<&str>) -> Result<Self> {
        let mut tokens = Vec::with_capacity(symbols.len());
        let mut index = HashMap::with_capacity(symbols.len());
        let mut terminal_seen = false;
        for s in symbols {
            let s = s.as_ref();
            if Some(s) == terminal {
                if terminal_seen {
                    return Err(Error::InvalidAlphabet(format!("duplicate symbol {s:?}")));
                }
                terminal_seen = true;
                continue;
            }
            if index.contains_key(s) {
                return Err(Error::InvalidAlphabet(format!("duplicate symbol {s:?}")));
            }
            if tokens.len() >= u16::MAX as usize - 1 {
                return Err(Error::InvalidAlphabet("too many symbols".into()));
            }
            tokens.push(s.to_string());
            index.insert(s.to_string(), tokens.len() as u16);
        }
        if let Some(t) = terminal {
            if !terminal_seen {
                return Err(Error::InvalidAlphabet(format!(
                    "terminal {t:?} is not one of the symbols"
                )));
            }
        }
        if tokens.is_empty() {
            return Err(Error::InvalidAlphabet("no non-terminal symbols".into()));
        }
        Ok(Alphabet {
            tokens,
            terminal: terminal.map(str::to_string),
            index,
        })
    }

    /// Non-terminal symbols in code order (code `i + 1` for index `i`).
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn terminal(&self) -> Option<&str> {
        self.terminal.as_deref()
    }

    /// Number of non-terminal symbols.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn code(&self, token: &str) -> Option<u16> {
        self.index.get(token).copied()
    }

    pub fn symbol(&self, code: u16) -> Option<&str> {
        if code == TERMINAL_CODE {
            return self.terminal.as_deref();
        }
        self.tokens.get(code as usize - 1).map(String::as_str)
    }
}

/// A finite list of non-terminal tokens. Termination is implicit: the
/// sequence is followed by the terminal symbol.
#[derive(Clone)]
pub struct Sequence {
    alphabet: Arc<Alphabet>,
    codes: Vec<u16>,
}

impl Sequence {
    /// Parses tokens against `alphabet`. The terminal symbol is rejected.
    pub fn parse<S: AsRef<str>>(alphabet: &Arc<Alphabet>, tokens: &[S]) -> Result<Self> {
        let codes = tokens
            .iter()
            .map(|t| {
                alphabet.code(t.as_ref()).ok_or_else(|| Error::UnknownToken {
                    token: t.as_ref().to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Sequence {
            alphabet: Arc::clone(alphabet),
            codes,
        })
    }

    /// Builds a sequence from token codes in `1..=alphabet.size()`.
    pub fn from_codes(alphabet: &Arc<Alphabet>, codes: Vec<u16>) -> Result<Self> {
        let n = alphabet.size() as u16;
        if let Some(&bad) = codes.iter().find(|&&c| c == TERMINAL_CODE || c > n) {
            return Err(Error::InvalidInput(format!("token code {bad} out of range")));
        }
        Ok(Sequence {
            alphabet: Arc::clone(alphabet),
            codes,
        })
    }

    pub fn empty(alphabet: &Arc<Alphabet>) -> Self {
        Sequence {
            alphabet: Arc::clone(alphabet),
            codes: Vec::new(),
        }
    }

    pub fn alphabet(&self) -> &Arc<Alphabet> {
        &self.alphabet
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> + '_ {
        self.codes
            .iter()
            .map(|&c| self.alphabet.symbol(c).expect("codes validated on construction"))
    }

    pub fn same_alphabet(&self, other: &Sequence) -> bool {
        Arc::ptr_eq(&self.alphabet, &other.alphabet) || *self.alphabet == *other.alphabet
    }
}

impl PartialEq for Sequence {
    fn eq(&self, other: &Self) -> bool {
        self.codes == other.codes && self.same_alphabet(other)
    }
}

impl fmt::Debug for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.tokens()).finish()
    }
}
