use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use super::images::ShardImages;
use super::SampleRecord;
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

#[derive(Default)]
struct Pair {
    image: Option<(String, Vec<u8>)>,
    caption: Option<String>,
}

type Members = BTreeMap<String, Vec<u8>>;

/// Records of one shard sorted by stem, plus raw image bytes keyed by member name.
fn load(path: &Path) -> Result<(Vec<SampleRecord>, Members)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut archive = tar::Archive::new(file);
    let mut pairs: BTreeMap<String, Pair> = BTreeMap::new();
    let entries = archive.entries().map_err(|e| Error::io(path, e))?;
    for entry in entries {
        let mut entry = entry.map_err(|e| Error::io(path, e))?;
        if !entry.header().entry_type().is_file() {
            continue;
        }
        let name = entry
            .path()
            .map_err(|e| Error::io(path, e))?
            .to_string_lossy()
            .into_owned();
        let Some((stem, ext)) = name.rsplit_once('.') else {
            continue;
        };
        let ext = ext.to_ascii_lowercase();
        let is_image = IMAGE_EXTENSIONS.contains(&ext.as_str());
        if !is_image && ext != "txt" {
            continue;
        }
        let mut bytes = Vec::new();
        entry.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        let pair = pairs.entry(stem.to_string()).or_default();
        let duplicate = if is_image {
            pair.image.replace((name.clone(), bytes)).is_some()
        } else {
            let mut text = String::from_utf8(bytes)
                .map_err(|_| Error::Format(format!("{}: caption {name:?} is not UTF-8", path.display())))?;
            if text.ends_with('\n') {
                text.pop();
                if text.ends_with('\r') {
                    text.pop();
                }
            }
            pair.caption.replace(text).is_some()
        };
        if duplicate {
            return Err(Error::Format(format!(
                "{}: stem {stem:?} has more than one {} member",
                path.display(),
                if is_image { "image" } else { "caption" }
            )));
        }
    }

    let mut records = Vec::with_capacity(pairs.len());
    let mut images = BTreeMap::new();
    for (stem, pair) in pairs {
        match pair {
            Pair {
                image: Some((member, bytes)),
                caption: Some(caption),
            } => {
                records.push(SampleRecord::new(stem, member.clone(), caption));
                images.insert(member, bytes);
            }
            _ => return Err(Error::Pairing(stem)),
        }
    }
    Ok((records, images))
}

/// Reads an uncompressed tar of `<stem>.{jpg,jpeg,png}` + `<stem>.txt` pairs.
/// One record per stem, sorted ascending by stem regardless of member order.
pub fn read_shard(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    load(path.as_ref()).map(|(records, _)| records)
}

/// Like [`read_shard`] but also returns the image bytes for scoring.
pub fn read_shard_with_images(path: impl AsRef<Path>) -> Result<(Vec<SampleRecord>, ShardImages)> {
    let (records, images) = load(path.as_ref())?;
    Ok((records, ShardImages::new(images)))
}

fn shard_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Merges several shards. Image refs become `<shard-filename>/<member>`; ids
/// that occur in more than one shard are prefixed the same way in every shard
/// where they occur, so the result does not depend on shard order.
pub fn merge_shards<P: AsRef<Path>>(paths: &[P]) -> Result<(Vec<SampleRecord>, ShardImages)> {
    let mut loaded = Vec::with_capacity(paths.len());
    for p in paths {
        let p = p.as_ref();
        let (records, images) = load(p)?;
        loaded.push((shard_name(p), records, images));
    }
    let mut occurrences: HashMap<String, usize> = HashMap::new();
    for (_, records, _) in &loaded {
        for r in records {
            *occurrences.entry(r.id.clone()).or_default() += 1;
        }
    }
    let mut all_records = Vec::new();
    let mut all_images = BTreeMap::new();
    for (shard, records, images) in loaded {
        for mut r in records {
            if occurrences[&r.id] > 1 {
                r.id = format!("{shard}/{}", r.id);
            }
            r.image_ref = format!("{shard}/{}", r.image_ref);
            all_records.push(r);
        }
        for (member, bytes) in images {
            all_images.insert(format!("{shard}/{member}"), bytes);
        }
    }
    let mut seen = std::collections::HashSet::new();
    for r in &all_records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateId(r.id.clone()));
        }
    }
    Ok((all_records, ShardImages::new(all_images)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tar(path: &Path, members: &[(&str, &[u8])]) {
        let mut builder = tar::Builder::new(File::create(path).unwrap());
        for (name, data) in members {
            let mut header = tar::Header::new_ustar();
            header.set_size(data.len() as u64);
            header.set_mode(0o644);
            header.set_cksum();
            builder.append_data(&mut header, name, *data).unwrap();
        }
        builder.finish().unwrap();
    }

    #[test]
    fn single_pair() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.tar");
        write_tar(&p, &[("000.jpg", b"jpegbytes"), ("000.txt", b"a dog\n")]);
        let recs = read_shard(&p).unwrap();
        assert_eq!(recs, vec![SampleRecord::new("000", "000.jpg", "a dog")]);
    }

    #[test]
    fn unpaired_image_names_stem() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.tar");
        write_tar(&p, &[("000.png", b"x"), ("000.txt", b"y"), ("001.jpg", b"z")]);
        match read_shard(&p) {
            Err(Error::Pairing(stem)) => assert_eq!(stem, "001"),
            other => panic!("expected pairing error, got {other:?}"),
        }
        let q = dir.path().join("t.tar");
        write_tar(&q, &[("002.txt", b"caption only")]);
        assert!(matches!(read_shard(&q), Err(Error::Pairing(s)) if s == "002"));
    }

    #[test]
    fn interleaved_members_sorted_by_stem() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.tar");
        write_tar(
            &p,
            &[
                ("c.txt", b"C"),
                ("a.jpg", b"1"),
                ("b.png", b"2"),
                ("a.txt", b"A\r\n"),
                ("c.jpg", b"3"),
                ("b.txt", b"B"),
                ("b.json", b"{}"),
            ],
        );
        let (recs, images) = read_shard_with_images(&p).unwrap();
        let got: Vec<_> = recs.iter().map(|r| (r.id.as_str(), r.caption.as_str())).collect();
        assert_eq!(got, [("a", "A"), ("b", "B"), ("c", "C")]);
        assert_eq!(images.bytes("b.png"), Some(&b"2"[..]));
    }

    #[test]
    fn merge_prefixes_colliding_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.tar");
        let q = dir.path().join("two.tar");
        write_tar(
            &p,
            &[
                ("000.jpg", b"x"),
                ("000.txt", b"a"),
                ("001.jpg", b"y"),
                ("001.txt", b"b"),
            ],
        );
        write_tar(&q, &[("000.jpg", b"z"), ("000.txt", b"c")]);
        let (recs, images) = merge_shards(&[&p, &q]).unwrap();
        let ids: Vec<_> = recs.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["one.tar/000", "001", "two.tar/000"]);
        assert_eq!(recs[1].image_ref, "one.tar/001.jpg");
        assert_eq!(images.bytes("two.tar/000.jpg"), Some(&b"z"[..]));
    }
}
