//! Cross-unit character association and canonical naming.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;

use super::characters::UnitCharacters;
use super::{CaptionContext, CaptioningError, MergeRecord};
use crate::parallel::fan_out;
use crate::structured_io::{query_with_repair, MergeReply, MergeTriple, Reply, Slot};
use crate::types::{CharacterRecord, CharacterRegistry, Part, StageTag};

// ---------------------------------------------------------------------------
// Canonicalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// Member names in first-appearance order.
    pub members: Vec<String>,
    /// Member whose record represents the component.
    pub canonical: String,
    /// Name assigned to the component in the final registry.
    pub fresh: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canonical {
    /// Components ordered by the first appearance of any member.
    pub components: Vec<Component>,
    /// Every member and every fresh name mapped to its fresh name.
    pub rename_map: BTreeMap<String, String>,
}

static UNIT_PREFIX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^c\d+_").unwrap());
static LETTER_SUFFIX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"_[a-z]{1,2}$").unwrap());

/// The kind part of a name: `c3_person_b` gives `person`.
pub fn kind_of(name: &str) -> String {
    let base = UNIT_PREFIX.replace(name, "");
    let kind = LETTER_SUFFIX.replace(&base, "");
    if kind.is_empty() {
        "character".to_string()
    } else {
        kind.into_owned()
    }
}

/// `a`, `b`, ..., `z`, `aa`, `ab`, ...
fn letter(mut n: usize) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'a' + (n % 26) as u8);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    s.reverse();
    String::from_utf8(s).unwrap()
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Groups `names` (unique, in first-appearance order) by the transitive
/// closure of the merge triples, picks each group's representative by
/// better-votes and assigns fresh kind-letter names. Triples naming
/// unknown names are ignored.
pub fn canonicalize(names: &[String], triples: &[MergeTriple]) -> Canonical {
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut uf = UnionFind((0..names.len()).collect());
    let mut votes = vec![0usize; names.len()];
    for (a, b, better) in triples {
        let (Some(&ia), Some(&ib), Some(&iw)) =
            (index.get(a.as_str()), index.get(b.as_str()), index.get(better.as_str()))
        else {
            continue;
        };
        uf.union(ia, ib);
        votes[iw] += 1;
    }

    // Roots are component minima, so ordering by root orders by first
    // appearance.
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..names.len() {
        groups.entry(uf.find(i)).or_default().push(i);
    }

    let mut components = Vec::with_capacity(groups.len());
    let mut used: BTreeSet<String> = BTreeSet::new();
    for members in groups.values() {
        let canonical = *members
            .iter()
            .max_by(|&&x, &&y| votes[x].cmp(&votes[y]).then(names[y].cmp(&names[x])))
            .unwrap();
        let own: BTreeSet<&str> = members.iter().map(|&i| names[i].as_str()).collect();
        let kind = kind_of(&names[canonical]);
        let fresh = (0..)
            .map(|n| format!("{kind}_{}", letter(n)))
            .find(|c| {
                let taken_elsewhere = index.contains_key(c.as_str()) && !own.contains(c.as_str());
                !taken_elsewhere && !used.contains(c)
            })
            .unwrap();
        used.insert(fresh.clone());
        components.push(Component {
            members: members.iter().map(|&i| names[i].clone()).collect(),
            canonical: names[canonical].clone(),
            fresh,
        });
    }

    let mut rename_map = BTreeMap::new();
    for c in &components {
        for m in &c.members {
            rename_map.insert(m.clone(), c.fresh.clone());
        }
        rename_map.insert(c.fresh.clone(), c.fresh.clone());
    }
    Canonical { components, rename_map }
}

// ---------------------------------------------------------------------------
// Association fold
// ---------------------------------------------------------------------------

pub(crate) struct Association {
    pub registry: CharacterRegistry,
    pub merges: Vec<MergeRecord>,
}

pub(crate) fn unit_id(video_id: &str, k: usize, i: usize, j: usize) -> String {
    format!("{video_id}/a{k:03}/w{i}x{j}")
}

fn set_slot(records: &[&CharacterRecord]) -> Slot {
    let mut parts = Vec::new();
    for r in records {
        parts.push(Part::text(format!(
            "[NAME: {}] [DESCRIPTION: {}]",
            r.name, r.description
        )));
        parts.push(Part::image(r.representative_frame.clone()));
    }
    Slot::from(parts)
}

/// Folds character units left to right. Each step compares the canonical
/// records accumulated so far against the next unit's records, in batches
/// that fit the image cap.
pub(crate) fn associate(ctx: &CaptionContext, chars: &[UnitCharacters]) -> Result<Association, CaptioningError> {
    let stage = StageTag::CharacterMerge;
    let batch = (ctx.sampling.frame_cap / 2).max(1);
    let mut names: Vec<String> = Vec::new();
    let mut by_name: BTreeMap<&str, &CharacterRecord> = BTreeMap::new();
    let mut merges: Vec<MergeRecord> = Vec::new();

    for (k, unit) in chars.iter().enumerate() {
        let incoming: Vec<&CharacterRecord> = unit.records.iter().collect();
        if !names.is_empty() && !incoming.is_empty() {
            let triples: Vec<MergeTriple> = merges.iter().map(MergeRecord::triple).collect();
            let acc: Vec<&CharacterRecord> = canonicalize(&names, &triples)
                .components
                .iter()
                .map(|c| by_name[c.canonical.as_str()])
                .collect();
            let windows: Vec<(usize, usize)> = (0..acc.len().div_ceil(batch))
                .flat_map(|i| (0..incoming.len().div_ceil(batch)).map(move |j| (i, j)))
                .collect();
            let replies = fan_out(&windows, ctx.cfg.workers, |_, &(i, j)| {
                let left = &acc[i * batch..((i + 1) * batch).min(acc.len())];
                let right = &incoming[j * batch..((j + 1) * batch).min(incoming.len())];
                let uid = unit_id(ctx.video_id(), k, i, j);
                let req = ctx.request(
                    stage,
                    uid.clone(),
                    &[("set_one", set_slot(left)), ("set_two", set_slot(right))],
                )?;
                let triples = match query_with_repair(ctx.gateway, &req, MergeReply::parse) {
                    Ok(p) => {
                        ctx.diagnostics.warn_all(stage, &uid, p.warnings);
                        p.value.triples
                    }
                    Err(e) => {
                        ctx.warn(stage, &uid, format!("no merges from this batch: {e}"));
                        Vec::new()
                    }
                };
                let valid = validate(ctx, &uid, left, right, triples);
                Ok::<_, CaptioningError>(valid)
            });
            for r in replies {
                for (kept, inc, better) in r? {
                    if merges
                        .iter()
                        .any(|m| m.step == k as u32 && m.kept == kept && m.incoming == inc)
                    {
                        continue;
                    }
                    merges.push(MergeRecord {
                        step: k as u32,
                        kept,
                        incoming: inc,
                        better,
                    });
                }
            }
        }
        for r in incoming {
            names.push(r.name.clone());
            by_name.insert(r.name.as_str(), r);
        }
    }

    let triples: Vec<MergeTriple> = merges.iter().map(MergeRecord::triple).collect();
    let canon = canonicalize(&names, &triples);
    let records = canon
        .components
        .iter()
        .map(|c| {
            let r = by_name[c.canonical.as_str()];
            CharacterRecord {
                name: c.fresh.clone(),
                description: r.description.clone(),
                representative_frame: r.representative_frame.clone(),
            }
        })
        .collect();
    Ok(Association {
        registry: CharacterRegistry {
            records,
            rename_map: canon.rename_map,
        },
        merges,
    })
}

/// Keeps triples whose first name is in the left set and second in the
/// right set. Reversed pairs are flipped; anything else is dropped.
fn validate(
    ctx: &CaptionContext,
    uid: &str,
    left: &[&CharacterRecord],
    right: &[&CharacterRecord],
    triples: Vec<MergeTriple>,
) -> Vec<MergeTriple> {
    let stage = StageTag::CharacterMerge;
    let in_left = |n: &str| left.iter().any(|r| r.name == n);
    let in_right = |n: &str| right.iter().any(|r| r.name == n);
    let mut out = Vec::new();
    for (a, b, better) in triples {
        if in_left(&a) && in_right(&b) {
            out.push((a, b, better));
        } else if in_left(&b) && in_right(&a) {
            ctx.warn(stage, uid, format!("flipping reversed pair ({a}, {b})"));
            out.push((b, a, better));
        } else {
            ctx.warn(stage, uid, format!("dropping pair ({a}, {b}) with unknown names"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn t(a: &str, b: &str, c: &str) -> MergeTriple {
        (a.into(), b.into(), c.into())
    }

    #[test]
    fn letters() {
        assert_eq!(letter(0), "a");
        assert_eq!(letter(25), "z");
        assert_eq!(letter(26), "aa");
        assert_eq!(letter(27), "ab");
        assert_eq!(letter(26 + 26 * 26), "aaa");
    }

    #[test]
    fn kinds() {
        assert_eq!(kind_of("c3_person_b"), "person");
        assert_eq!(kind_of("c12_red_car"), "red_car");
        assert_eq!(kind_of("person_aa"), "person");
        assert_eq!(kind_of("c0_a"), "a");
        assert_eq!(kind_of("c0__b"), "character");
    }

    #[test]
    fn merges_and_names() {
        let names = s(&[
            "c0_person_a",
            "c0_dog_a",
            "c1_person_a",
            "c2_person_a",
            "c2_cat_a",
            "c4_person_a",
        ]);
        let triples = vec![
            t("c0_person_a", "c2_person_a", "c2_person_a"),
            t("c1_person_a", "c4_person_a", "c1_person_a"),
        ];
        let c = canonicalize(&names, &triples);
        let got: Vec<(Vec<String>, &str, &str)> = c
            .components
            .iter()
            .map(|c| (c.members.clone(), c.canonical.as_str(), c.fresh.as_str()))
            .collect();
        assert_eq!(
            got,
            vec![
                (s(&["c0_person_a", "c2_person_a"]), "c2_person_a", "person_a"),
                (s(&["c0_dog_a"]), "c0_dog_a", "dog_a"),
                (s(&["c1_person_a", "c4_person_a"]), "c1_person_a", "person_b"),
                (s(&["c2_cat_a"]), "c2_cat_a", "cat_a"),
            ]
        );
        assert_eq!(c.rename_map["c4_person_a"], "person_b");
        assert_eq!(c.rename_map["person_b"], "person_b");
    }

    #[test]
    fn ties_pick_smallest_name() {
        let names = s(&["c1_x_a", "c0_x_a", "c2_x_a"]);
        let triples = vec![t("c1_x_a", "c0_x_a", "c1_x_a"), t("c0_x_a", "c2_x_a", "c2_x_a")];
        let c = canonicalize(&names, &triples);
        assert_eq!(c.components.len(), 1);
        assert_eq!(c.components[0].canonical, "c1_x_a");
    }

    #[test]
    fn fresh_names_avoid_other_components_old_names() {
        let names = s(&["c0_person_a", "person_a"]);
        let c = canonicalize(&names, &[]);
        let fresh: Vec<&str> = c.components.iter().map(|c| c.fresh.as_str()).collect();
        assert_eq!(fresh, vec!["person_b", "person_a"]);
        assert_eq!(c.rename_map["c0_person_a"], "person_b");
        assert_eq!(c.rename_map["person_a"], "person_a");
    }
}
