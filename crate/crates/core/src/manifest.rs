//! Dataset manifests and payload files.
//!
//! A manifest is a tab-separated file with one `id  media  label  path`
//! record per line; blank lines and lines starting with `#` are ignored.
//! Paths are relative to the manifest's directory unless absolute.
//! Images are PNG or BMP, audio is mono linear-PCM WAV, a video is a
//! directory of frame images taken in file-name order, and text is UTF-8.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::media::{Media, MediaInstance, Payload, PixelGrid, Waveform};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub media: Media,
    pub label: usize,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    /// Directory that relative paths are resolved against.
    pub base: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, base: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut ids = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: String| Error::Format(format!("manifest line {}: {m}", n + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 tab-separated fields, found {}", fields.len())));
            }
            let id = fields[0].trim().to_string();
            if id.is_empty() {
                return Err(bad("empty id".into()));
            }
            let media: Media = fields[1].parse().map_err(|e: Error| bad(e.to_string()))?;
            let label = fields[2]
                .trim()
                .parse()
                .map_err(|_| bad(format!("label `{}` is not a non-negative integer", fields[2])))?;
            if !ids.insert(id.clone()) {
                return Err(bad(format!("duplicate id `{id}`")));
            }
            entries.push(ManifestEntry {
                id,
                media,
                label,
                path: PathBuf::from(fields[3].trim()),
            });
        }
        Ok(Manifest {
            base: base.into(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# id\tmedia\tlabel\tpath\n");
        for e in &self.entries {
            out += &format!("{}\t{}\t{}\t{}\n", e.id, e.media, e.label, e.path.display());
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base.join(&entry.path)
        }
    }

    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<MediaInstance> {
        let path = self.resolve(entry);
        let payload = match entry.media {
            Media::Image => Payload::Image(read_image(&path)?),
            Media::Text => Payload::Text(read_text(&path)?),
            Media::Audio => Payload::Audio(read_wav(&path)?),
            Media::Video => Payload::Video(read_video(&path)?),
        };
        Ok(MediaInstance {
            id: entry.id.clone(),
            media: entry.media,
            label: entry.label,
            payload,
        })
    }

    /// Loads every payload; unreadable entries are returned separately
    /// instead of aborting the whole load.
    pub fn load_instances(&self) -> (Vec<MediaInstance>, Vec<(String, Error)>) {
        let mut ok = Vec::with_capacity(self.entries.len());
        let mut failed = Vec::new();
        for e in &self.entries {
            match self.load_entry(e) {
                Ok(i) => ok.push(i),
                Err(err) => failed.push((e.id.clone(), err)),
            }
        }
        (ok, failed)
    }
}

pub fn read_image(path: &Path) -> Result<PixelGrid> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    PixelGrid::new(w as usize, h as usize, img.into_raw())
}

/// Writes a PNG (or BMP for a `.bmp` extension).
pub fn write_image(path: &Path, grid: &PixelGrid) -> Result<()> {
    let img = image::RgbImage::from_raw(grid.width as u32, grid.height as u32, grid.data.clone())
        .ok_or_else(|| Error::Shape("pixel buffer does not match dimensions".into()))?;
    img.save(path)?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|_| Error::Format(format!("{}: not valid UTF-8", path.display())))
}

/// Mono WAV, integer or float samples; integers are scaled to [-1, 1).
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<std::result::Result<Vec<_>, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<Vec<_>, _>>()?
        }
    };
    Ok(Waveform {
        sample_rate: spec.sample_rate,
        samples,
    })
}

/// 16-bit mono PCM.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &wave.samples {
        w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

fn is_frame_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "bmp")
    )
}

/// Frames of a video directory, ordered by file name.
pub fn read_video(dir: &Path) -> Result<Vec<PixelGrid>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_frame_file(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Format(format!("{}: video directory has no frames", dir.display())));
    }
    files.iter().map(|f| read_image(f)).collect()
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes every payload under `dir` and returns the manifest describing
/// them (not yet saved).
pub fn materialize(instances: &[MediaInstance], dir: &Path) -> Result<Manifest> {
    for sub in ["images", "texts", "audio", "videos"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut entries = Vec::with_capacity(instances.len());
    for inst in instances {
        let name = sanitize(&inst.id);
        let rel = match &inst.payload {
            Payload::Image(g) => {
                let rel = PathBuf::from("images").join(format!("{name}.png"));
                write_image(&dir.join(&rel), g)?;
                rel
            }
            Payload::Text(t) => {
                let rel = PathBuf::from("texts").join(format!("{name}.txt"));
                let p = dir.join(&rel);
                fs::write(&p, t).map_err(|e| Error::io(&p, e))?;
                rel
            }
            Payload::Audio(w) => {
                let rel = PathBuf::from("audio").join(format!("{name}.wav"));
                write_wav(&dir.join(&rel), w)?;
                rel
            }
            Payload::Video(frames) => {
                let rel = PathBuf::from("videos").join(&name);
                let p = dir.join(&rel);
                fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
                for (i, f) in frames.iter().enumerate() {
                    write_image(&p.join(format!("frame_{i:04}.png")), f)?;
                }
                rel
            }
        };
        entries.push(ManifestEntry {
            id: inst.id.clone(),
            media: inst.media,
            label: inst.label,
            path: rel,
        });
    }
    Ok(Manifest {
        base: dir.to_path_buf(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render() {
        let text = "# header\nimg1\timage\t0\ta.png\n\nt1\ttext\t2\tsub/t.txt\n";
        let m = Manifest::parse(text, "/data").unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[1].media, Media::Text);
        assert_eq!(m.resolve(&m.entries[1]), PathBuf::from("/data/sub/t.txt"));
        assert_eq!(Manifest::parse(&m.to_tsv(), "/data").unwrap(), m);
    }

    #[test]
    fn malformed_lines_rejected() {
        for bad in [
            "a\timage\t0\n",
            "a\tpicture\t0\tp\n",
            "a\timage\t-1\tp\n",
            "a\timage\t0\tp\na\ttext\t0\tq\n",
            "\timage\t0\tp\n",
        ] {
            assert!(matches!(Manifest::parse(bad, "."), Err(Error::Format(_))), "{bad:?}");
        }
    }

    #[test]
    fn payload_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = PixelGrid::new(3, 2, (0..18).map(|v| v as u8 * 13).collect()).unwrap();
        let wave = Waveform {
            sample_rate: 8000,
            samples: vec![0.0, 0.5, -0.5, 0.25, -1.0],
        };
        let instances = vec![
            MediaInstance {
                id: "img/1".into(),
                media: Media::Image,
                label: 0,
                payload: Payload::Image(grid.clone()),
            },
            MediaInstance {
                id: "t".into(),
                media: Media::Text,
                label: 1,
                payload: Payload::Text("héllo wörld".into()),
            },
            MediaInstance {
                id: "a".into(),
                media: Media::Audio,
                label: 2,
                payload: Payload::Audio(wave.clone()),
            },
            MediaInstance {
                id: "v".into(),
                media: Media::Video,
                label: 0,
                payload: Payload::Video(vec![grid.clone(), PixelGrid::filled(3, 2, [1, 2, 3])]),
            },
        ];
        let m = materialize(&instances, dir.path()).unwrap();
        let path = dir.path().join("manifest.tsv");
        m.save(&path).unwrap();
        let loaded = Manifest::load(&path).unwrap();
        let (back, failed) = loaded.load_instances();
        assert!(failed.is_empty());
        assert_eq!(back[0], instances[0]);
        assert_eq!(back[1], instances[1]);
        assert_eq!(back[3], instances[3]);
        let Payload::Audio(w) = &back[2].payload else { panic!() };
        assert_eq!(w.sample_rate, 8000);
        for (a, b) in w.samples.iter().zip(&wave.samples) {
            assert!((a - b).abs() < 1.0 / 16000.0, "{a} {b}");
        }
    }

    #[test]
    fn missing_and_bad_payloads_reported_per_entry() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("bad.txt"), [0xff, 0xfe, 0x00]).unwrap();
        fs::write(dir.path().join("bad.png"), b"not an image").unwrap();
        fs::write(dir.path().join("ok.txt"), "fine").unwrap();
        fs::create_dir(dir.path().join("empty")).unwrap();
        let text = "a\ttext\t0\tbad.txt\nb\timage\t0\tbad.png\nc\taudio\t0\tmissing.wav\nd\tvideo\t0\tempty\ne\ttext\t0\tok.txt\n";
        let m = Manifest::parse(text, dir.path()).unwrap();
        let (ok, failed) = m.load_instances();
        assert_eq!(ok.len(), 1);
        let ids: Vec<&str> = failed.iter().map(|f| f.0.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c", "d"]);
        assert!(failed.iter().all(|f| f.1.kind() == crate::ErrorKind::Data));
    }

    #[test]
    fn stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(read_wav(&p).is_err());
    }
}
