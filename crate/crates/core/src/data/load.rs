use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Dataset, ItemId, UserId};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Skip the first non-comment line of each source.
    pub skip_header: bool,
}

struct Remap {
    index: BTreeMap<String, u32>,
    labels: Vec<String>,
}

impl Remap {
    fn new() -> Self {
        Remap { index: BTreeMap::new(), labels: Vec::new() }
    }

    fn id(&mut self, raw: &str) -> u32 {
        if let Some(&id) = self.index.get(raw) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.index.insert(raw.to_owned(), id);
        self.labels.push(raw.to_owned());
        id
    }
}

fn records<R: BufRead>(
    source: R,
    opts: &LoadOptions,
    mut each: impl FnMut(&str, &str) -> Result<()>,
) -> Result<usize> {
    let mut seen = 0usize;
    let mut header_pending = opts.skip_header;
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected 2 or 3 fields, found {}", fields.len()),
            });
        }
        if fields.len() == 3 && fields[2].parse::<f64>().is_err() {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("weight field {:?} is not numeric", fields[2]),
            });
        }
        each(fields[0], fields[1])?;
        seen += 1;
    }
    Ok(seen)
}

/// Reads `user item [weight]` interaction lines and `user user` social lines.
/// Users are numbered in order of first appearance across the interaction
/// source and then the social source; items in order of first appearance.
pub fn load_dataset<I: BufRead, S: BufRead>(
    interaction_source: I,
    social_source: S,
    opts: &LoadOptions,
) -> Result<Dataset> {
    let mut users = Remap::new();
    let mut items = Remap::new();
    let mut inter: Vec<(UserId, ItemId)> = Vec::new();
    let count = records(interaction_source, opts, |u, i| {
        inter.push((users.id(u), items.id(i)));
        Ok(())
    })?;
    if count == 0 {
        return invalid("interaction source contains no records");
    }
    let mut social = Vec::new();
    records(social_source, opts, |a, b| {
        social.push((users.id(a), users.id(b)));
        Ok(())
    })?;
    let n = users.labels.len();
    let m = items.labels.len();
    Ok(Dataset::from_parts(n, m, inter, social)?.with_labels(users.labels, items.labels))
}

/// Writes interactions and social pairs back out in the loader's text format
/// using the original labels. Fake users are listed in the returned sidecar.
pub fn write_dataset<W1: Write, W2: Write>(
    dataset: &Dataset,
    mut interactions: W1,
    mut social: W2,
) -> Result<FakeSidecar> {
    for &(u, i) in dataset.interactions() {
        writeln!(interactions, "{}\t{}", dataset.user_label(u), dataset.item_label(i))?;
    }
    for &(a, b) in dataset.social_edges() {
        writeln!(social, "{}\t{}", dataset.user_label(a), dataset.user_label(b))?;
    }
    let fakes = (dataset.real_user_count()..dataset.user_count())
        .map(|u| dataset.user_label(u as UserId).to_owned())
        .collect();
    Ok(FakeSidecar { real_users: dataset.real_user_count(), fake_users: fakes })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FakeSidecar {
    pub real_users: usize,
    pub fake_users: Vec<String>,
}
