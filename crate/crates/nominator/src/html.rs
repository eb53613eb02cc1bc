//! Lenient HTML to [`DomTree`] conversion.
//!
//! Only element structure, tag names and own text are recovered. Geometry and
//! typography need a renderer and stay absent. The parser never rejects
//! markup: unknown constructs are skipped, unclosed elements are closed at the
//! end of input, stray end tags are dropped, and the usual implied end tags
//! (`li`, `p`, table cells, options, ...) are applied.

use nominator_core::dom::{DomNode, DomTree, InvariantError};

#[derive(Debug, thiserror::Error)]
pub enum HtmlError {
    #[error("document contains no element")]
    EmptyDocument,
    #[error(transparent)]
    Invariant(#[from] InvariantError),
}

const VOID: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source",
    "track", "wbr",
];

/// Elements whose content is taken verbatim up to the matching end tag.
const RAW_TEXT: &[&str] = &["script", "style"];

/// Like [`RAW_TEXT`] but character references are decoded.
const ESCAPABLE_RAW_TEXT: &[&str] = &["textarea", "title"];

/// Start tags that close an open `p`.
const CLOSES_P: &[&str] = &[
    "address",
    "article",
    "aside",
    "blockquote",
    "details",
    "dialog",
    "div",
    "dl",
    "fieldset",
    "figcaption",
    "figure",
    "footer",
    "form",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "header",
    "hgroup",
    "hr",
    "main",
    "menu",
    "nav",
    "ol",
    "p",
    "pre",
    "section",
    "table",
    "ul",
];

const HEADINGS: &[&str] = &["h1", "h2", "h3", "h4", "h5", "h6"];

/// Content inside these is parsed with XML-style self-closing tags.
const FOREIGN: &[&str] = &["svg", "math"];

#[derive(Debug)]
struct Element {
    parent: Option<usize>,
    tag: String,
    text: String,
    raw: bool,
}

#[derive(Debug, Default)]
struct Builder {
    elements: Vec<Element>,
    open: Vec<usize>,
}

impl Builder {
    fn top_tag(&self) -> Option<&str> {
        self.open.last().map(|&i| self.elements[i].tag.as_str())
    }

    fn foreign(&self) -> bool {
        self.open
            .iter()
            .any(|&i| FOREIGN.contains(&self.elements[i].tag.as_str()))
    }

    /// Pops through the nearest open element named in `targets`, unless one
    /// named in `barriers` is found first.
    fn close_nearest(&mut self, targets: &[&str], barriers: &[&str]) {
        for depth in (0..self.open.len()).rev() {
            let tag = self.elements[self.open[depth]].tag.as_str();
            if targets.contains(&tag) {
                self.open.truncate(depth);
                return;
            }
            if barriers.contains(&tag) {
                return;
            }
        }
    }

    fn implied_end_tags(&mut self, tag: &str) {
        const SCOPE: &[&str] = &[
            "button", "table", "td", "th", "caption", "marquee", "object", "applet", "html",
            "template",
        ];
        if CLOSES_P.contains(&tag) {
            self.close_nearest(&["p"], SCOPE);
        }
        match tag {
            "li" => self.close_nearest(&["li"], &["ul", "ol", "menu", "table"]),
            "dt" | "dd" => self.close_nearest(&["dt", "dd"], &["dl", "table"]),
            "option" => {
                if self.top_tag() == Some("option") {
                    self.open.pop();
                }
            }
            "optgroup" => {
                if self.top_tag() == Some("option") {
                    self.open.pop();
                }
                if self.top_tag() == Some("optgroup") {
                    self.open.pop();
                }
            }
            "tr" => self.close_nearest(&["tr"], &["table", "tbody", "thead", "tfoot"]),
            "td" | "th" => self.close_nearest(&["td", "th"], &["tr", "table"]),
            "tbody" | "thead" | "tfoot" => {
                self.close_nearest(&["tbody", "thead", "tfoot"], &["table"])
            }
            _ => {}
        }
        if HEADINGS.contains(&tag) && self.top_tag().is_some_and(|t| HEADINGS.contains(&t)) {
            self.open.pop();
        }
    }

    fn start(&mut self, tag: String, self_closing: bool) -> usize {
        self.implied_end_tags(&tag);
        // content after the root has been closed still belongs to the root
        let parent = self.open.last().copied().or(if self.elements.is_empty() {
            None
        } else {
            Some(0)
        });
        let closes = VOID.contains(&tag.as_str())
            || (self_closing && (self.foreign() || FOREIGN.contains(&tag.as_str())));
        let id = self.elements.len();
        self.elements.push(Element {
            parent,
            tag,
            text: String::new(),
            raw: false,
        });
        if !closes {
            self.open.push(id);
        }
        id
    }

    fn end(&mut self, tag: &str) {
        if let Some(depth) = self.open.iter().rposition(|&i| self.elements[i].tag == tag) {
            self.open.truncate(depth);
        }
    }

    fn text(&mut self, s: &str) {
        if let Some(&top) = self.open.last() {
            let el = &mut self.elements[top];
            if !el.text.is_empty() {
                el.text.push(' ');
            }
            el.text.push_str(s);
        }
    }
}

/// Lowercase tag name starting at `i`, and the index just past it.
fn tag_name(s: &str, i: usize) -> (String, usize) {
    let end = s[i..]
        .find(|c: char| c.is_ascii_whitespace() || c == '/' || c == '>')
        .map_or(s.len(), |k| i + k);
    (s[i..end].to_ascii_lowercase(), end)
}

/// Skips attributes from `i`; returns the index past `>` and whether the tag
/// was written `<.../>`.
fn skip_attributes(s: &str, mut i: usize) -> (usize, bool) {
    let b = s.as_bytes();
    let mut self_closing = false;
    while i < b.len() {
        match b[i] {
            b'>' => return (i + 1, self_closing),
            b'/' => {
                self_closing = true;
                i += 1;
            }
            q @ (b'"' | b'\'') => {
                self_closing = false;
                i = s[i + 1..]
                    .find(q as char)
                    .map_or(b.len(), |k| i + 1 + k + 1);
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                self_closing = false;
                i += 1;
            }
        }
    }
    (b.len(), self_closing)
}

fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    let n = needle.len();
    haystack
        .as_bytes()
        .windows(n)
        .position(|w| w.eq_ignore_ascii_case(needle.as_bytes()))
}

fn normalize(text: &str) -> Option<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    (!words.is_empty()).then(|| words.join(" "))
}

fn decode(text: &str) -> String {
    html_escape::decode_html_entities(text).into_owned()
}

/// Parses `bytes` (lossily decoded as UTF-8) into a tree with tag, text and
/// image counts filled in.
pub fn parse_html(page_id: &str, bytes: &[u8]) -> Result<DomTree, HtmlError> {
    let src = String::from_utf8_lossy(bytes);
    let s = src.as_ref();
    let b = s.as_bytes();
    let mut tree = Builder::default();
    let mut i = 0;
    while i < b.len() {
        if b[i] != b'<' {
            let end = s[i..].find('<').map_or(s.len(), |k| i + k);
            tree.text(&decode(&s[i..end]));
            i = end;
            continue;
        }
        let rest = &s[i..];
        if let Some(comment) = rest.strip_prefix("<!--") {
            i = comment.find("-->").map_or(s.len(), |k| i + 4 + k + 3);
        } else if rest.starts_with("<!") || rest.starts_with("<?") {
            i = rest.find('>').map_or(s.len(), |k| i + k + 1);
        } else if rest.starts_with("</") && b.get(i + 2).is_some_and(u8::is_ascii_alphabetic) {
            let (name, after) = tag_name(s, i + 2);
            tree.end(&name);
            i = s[after..].find('>').map_or(s.len(), |k| after + k + 1);
        } else if b.get(i + 1).is_some_and(u8::is_ascii_alphabetic) {
            let (name, after) = tag_name(s, i + 1);
            let (next, self_closing) = skip_attributes(s, after);
            i = next;
            let raw = RAW_TEXT.contains(&name.as_str());
            let escapable = ESCAPABLE_RAW_TEXT.contains(&name.as_str());
            let id = tree.start(name.clone(), self_closing);
            if (raw || escapable) && tree.open.last() == Some(&id) {
                let close = format!("</{name}");
                let end = find_ci(&s[i..], &close).map_or(s.len(), |k| i + k);
                let content = &s[i..end];
                let el = &mut tree.elements[id];
                if raw {
                    el.text = content.trim().to_string();
                    el.raw = true;
                } else {
                    el.text = decode(content);
                }
                tree.open.pop();
                i = s[end..].find('>').map_or(s.len(), |k| end + k + 1);
            }
        } else {
            tree.text("<");
            i += 1;
        }
    }
    if tree.elements.is_empty() {
        return Err(HtmlError::EmptyDocument);
    }

    let mut images: Vec<u32> = tree
        .elements
        .iter()
        .map(|e| u32::from(e.tag == "img"))
        .collect();
    for id in (1..tree.elements.len()).rev() {
        if let Some(p) = tree.elements[id].parent {
            images[p] += images[id];
        }
    }
    let nodes = tree
        .elements
        .into_iter()
        .enumerate()
        .map(|(id, e)| {
            let mut node = DomNode::new(id, e.parent, e.tag);
            node.text = if e.raw {
                (!e.text.is_empty()).then_some(e.text)
            } else {
                normalize(&e.text)
            };
            node.num_images_subtree = Some(images[id]);
            node
        })
        .collect();
    Ok(DomTree::new(page_id, nodes)?)
}
