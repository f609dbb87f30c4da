//! File formats: gaze JSON lines, binary flow (`MFLO`), 16-bit PGM heatmaps and
//! small CSV tables.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FlowField, GazeFrame, Heatmap, GAZE_SLOTS};
use crate::objective::AnnotationRecord;

pub const FLOW_MAGIC: &[u8; 4] = b"MFLO";

fn display(path: &Path) -> String {
    path.display().to_string()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGaze {
    frame: usize,
    points: Vec<[f64; 2]>,
    valid: Vec<bool>,
}

/// Parses gaze JSON lines from a string. Blank lines are skipped.
pub fn parse_gaze_jsonl(text: &str) -> Result<Vec<GazeFrame>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawGaze = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if raw.points.len() != GAZE_SLOTS || raw.valid.len() != GAZE_SLOTS {
            return Err(Error::Parse {
                line: line_no,
                msg: format!(
                    "expected {GAZE_SLOTS} gaze slots, got {} points and {} validity flags",
                    raw.points.len(),
                    raw.valid.len()
                ),
            });
        }
        let frame = GazeFrame::new(
            raw.frame,
            [raw.points[0], raw.points[1], raw.points[2]],
            [raw.valid[0], raw.valid[1], raw.valid[2]],
        )
        .map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        out.push(frame);
    }
    Ok(out)
}

/// Reads one gaze frame per line: `{"frame": int, "points": [[x,y]×3], "valid": [bool×3]}`.
pub fn read_gaze_jsonl(path: &Path) -> Result<Vec<GazeFrame>> {
    let text = fs::read_to_string(path)?;
    let frames = parse_gaze_jsonl(&text)?;
    if frames.is_empty() {
        eprintln!("warning: {} contains no gaze frames", display(path));
    }
    Ok(frames)
}

pub fn gaze_to_jsonl(frames: &[GazeFrame]) -> String {
    let mut s = String::new();
    for f in frames {
        s.push_str(&serde_json::to_string(f).expect("gaze frames serialize"));
        s.push('\n');
    }
    s
}

pub fn write_gaze_jsonl(path: &Path, frames: &[GazeFrame]) -> Result<()> {
    fs::write(path, gaze_to_jsonl(frames))?;
    Ok(())
}

/// Serializes flow frames: per frame the magic, LE u32 width and height, then the
/// u plane and the v plane as row-major LE f32.
pub fn encode_flow(frames: &[FlowField]) -> Vec<u8> {
    let mut out = Vec::new();
    for f in frames {
        out.extend_from_slice(FLOW_MAGIC);
        out.extend_from_slice(&(f.width() as u32).to_le_bytes());
        out.extend_from_slice(&(f.height() as u32).to_le_bytes());
        for plane in [f.u(), f.v()] {
            for &x in plane {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    out
}

fn take<'a>(bytes: &'a [u8], offset: &mut usize, n: usize, path: &str) -> Result<&'a [u8]> {
    if bytes.len() < *offset + n {
        return Err(Error::Format {
            path: path.to_string(),
            msg: format!(
                "truncated at byte offset {}: needed {n} more bytes, {} available",
                *offset,
                bytes.len() - *offset
            ),
        });
    }
    let s = &bytes[*offset..*offset + n];
    *offset += n;
    Ok(s)
}

pub fn decode_flow(bytes: &[u8], path: &str) -> Result<Vec<FlowField>> {
    let mut offset = 0;
    let mut frames = Vec::new();
    while offset < bytes.len() {
        let start = offset;
        let magic = take(bytes, &mut offset, 4, path)?;
        if magic != FLOW_MAGIC {
            return Err(Error::Format {
                path: path.to_string(),
                msg: format!("bad magic at byte offset {start}: {magic:?}"),
            });
        }
        let w = u32::from_le_bytes(take(bytes, &mut offset, 4, path)?.try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(take(bytes, &mut offset, 4, path)?.try_into().unwrap()) as usize;
        if w < 2 || h < 2 {
            return Err(Error::Format {
                path: path.to_string(),
                msg: format!("flow frame at byte offset {start} has invalid size {w}x{h}"),
            });
        }
        let mut planes = [Vec::with_capacity(w * h), Vec::with_capacity(w * h)];
        for plane in &mut planes {
            let raw = take(bytes, &mut offset, 4 * w * h, path)?;
            plane.extend(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64),
            );
        }
        let [u, v] = planes;
        frames.push(FlowField::from_planes(w, h, u, v).map_err(|e| Error::Format {
            path: path.to_string(),
            msg: e.to_string(),
        })?);
    }
    Ok(frames)
}

pub fn write_flow(path: &Path, frames: &[FlowField]) -> Result<()> {
    fs::write(path, encode_flow(frames))?;
    Ok(())
}

pub fn read_flow(path: &Path) -> Result<Vec<FlowField>> {
    let bytes = fs::read(path)?;
    decode_flow(&bytes, &display(path))
}

/// Binary PGM (P5), maxval 65535, big-endian samples, `round(v · 65535)`.
pub fn encode_pgm(map: &Heatmap) -> Result<Vec<u8>> {
    if let Some(v) = map.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Invalid(format!("heatmap value {v} outside [0,1]")));
    }
    let mut out = format!("P5\n{} {}\n65535\n", map.width(), map.height()).into_bytes();
    out.reserve(2 * map.len());
    for &v in map.data() {
        out.extend_from_slice(&((v * 65535.0).round() as u16).to_be_bytes());
    }
    Ok(out)
}

pub fn write_heatmap_pgm(map: &Heatmap, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(map)?)?;
    Ok(())
}

/// Reads a P5 PGM (8- or 16-bit) into `[0,1]` values.
pub fn decode_pgm(bytes: &[u8], path: &str) -> Result<Heatmap> {
    let bad = |msg: String| Error::Format {
        path: path.to_string(),
        msg,
    };
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad(format!("truncated header at byte offset {pos}")));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if tokens[0] != "P5" {
        return Err(bad(format!("unsupported magic {:?}", tokens[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("invalid header field {s:?}")));
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(bad(format!("invalid maxval {maxval}")));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = w * h * bps;
    if bytes.len() < pos + need {
        return Err(bad(format!(
            "truncated at byte offset {}: raster needs {need} bytes",
            bytes.len()
        )));
    }
    let raster = &bytes[pos..pos + need];
    let data = if bps == 1 {
        raster.iter().map(|&b| b as f64 / maxval as f64).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64)
            .collect()
    };
    Heatmap::from_vec(w, h, data).map_err(|e| bad(e.to_string()))
}

pub fn read_heatmap_pgm(path: &Path) -> Result<Heatmap> {
    let bytes = fs::read(path)?;
    decode_pgm(&bytes, &display(path))
}

/// `frame,x,y,label`.
pub fn annotations_to_csv(records: &[AnnotationRecord]) -> String {
    let mut s = String::from("frame,x,y,label\n");
    for r in records {
        s.push_str(&format!("{},{},{},{}\n", r.frame, r.x, r.y, r.label));
    }
    s
}

pub fn parse_annotations_csv(text: &str) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: n + 1, msg };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(err(format!("expected 4 columns, got {}", cols.len())));
        }
        let f = |s: &str| s.trim().parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        let frame = cols[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| err(format!("{:?}: {e}", cols[0])))?;
        let rec = AnnotationRecord::new(frame, f(cols[1])?, f(cols[2])?, f(cols[3])?)
            .map_err(|e| err(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_annotations_csv(path: &Path) -> Result<Vec<AnnotationRecord>> {
    parse_annotations_csv(&fs::read_to_string(path)?)
}

pub fn write_annotations_csv(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    fs::write(path, annotations_to_csv(records))?;
    Ok(())
}

/// Writes `{prefix}_{t:06}.pgm` for every map in `dir`.
pub fn write_pgm_sequence(dir: &Path, prefix: &str, maps: &[Heatmap]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (t, m) in maps.iter().enumerate() {
        write_heatmap_pgm(m, &dir.join(format!("{prefix}_{t:06}.pgm")))?;
    }
    Ok(())
}

/// Reads `{prefix}_{t:06}.pgm` for `t = 0, 1, …` until the first missing file.
pub fn read_pgm_sequence(dir: &Path, prefix: &str) -> Result<Vec<Heatmap>> {
    let mut out = Vec::new();
    loop {
        let p = dir.join(format!("{prefix}_{:06}.pgm", out.len()));
        if !p.exists() {
            break;
        }
        out.push(read_heatmap_pgm(&p)?);
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Provenance record for a CLI run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gaze_line_format() {
        let frames = parse_gaze_jsonl(
            r#"{"frame":0,"points":[[0.5,0.5],[0,0],[0,0]],"valid":[true,false,false]}"#,
        )
        .unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].valid_count(), 1);
        assert_eq!(parse_gaze_jsonl("").unwrap().len(), 0);
    }

    #[test]
    fn gaze_errors_name_the_line() {
        let text = "{\"frame\":0,\"points\":[[0.5,0.5],[0,0],[0,0]],\"valid\":[true,false,false]}\nnot json\n";
        assert!(matches!(parse_gaze_jsonl(text), Err(Error::Parse { line: 2, .. })));
        let two = r#"{"frame":0,"points":[[0.5,0.5],[0,0]],"valid":[true,false]}"#;
        assert!(matches!(parse_gaze_jsonl(two), Err(Error::Parse { line: 1, .. })));
        let outside = r#"{"frame":0,"points":[[1.5,0.5],[0,0],[0,0]],"valid":[true,false,false]}"#;
        assert!(matches!(parse_gaze_jsonl(outside), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn flow_zero_round_trip_is_byte_identical() {
        let f = vec![FlowField::zeros(4, 3)];
        let bytes = encode_flow(&f);
        assert_eq!(bytes.len(), 12 + 2 * 4 * 12);
        let back = decode_flow(&bytes, "mem").unwrap();
        assert_eq!(encode_flow(&back), bytes);
    }

    #[test]
    fn flow_header_only_is_truncated() {
        let bytes = encode_flow(&[FlowField::zeros(4, 3)]);
        let err = decode_flow(&bytes[..12], "mem").unwrap_err();
        assert!(err.to_string().contains("byte offset 12"), "{err}");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_flow(&bad, "mem").unwrap_err().to_string().contains("bad magic"));
    }

    #[test]
    fn pgm_values() {
        let z = Heatmap::zeros(3, 2);
        let bytes = encode_pgm(&z).unwrap();
        assert!(bytes.ends_with(&[0u8; 12]));
        let one = Heatmap::filled(2, 2, 1.0);
        let bytes = encode_pgm(&one).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[0xff, 0xff]);
        assert!(encode_pgm(&Heatmap::filled(2, 2, 1.5)).is_err());
        let back = decode_pgm(&bytes, "mem").unwrap();
        assert_eq!(back, one);
    }

    #[test]
    fn annotations_round_trip() {
        let recs = vec![
            AnnotationRecord::new(3, 0.25, 0.125, 0.75).unwrap(),
            AnnotationRecord::new(0, 1.0, 0.0, 0.0).unwrap(),
        ];
        assert_eq!(parse_annotations_csv(&annotations_to_csv(&recs)).unwrap(), recs);
        assert!(matches!(
            parse_annotations_csv("frame,x,y,label\n1,0.5,0.5\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    fn arb_gaze() -> impl Strategy<Value = GazeFrame> {
        (0usize..1000, prop::array::uniform3((0.0f64..=1.0, 0.0f64..=1.0)), prop::array::uniform3(any::<bool>()))
            .prop_map(|(f, p, v)| GazeFrame::new(f, p.map(|(x, y)| [x, y]), v).unwrap())
    }

    proptest! {
        #[test]
        fn gaze_jsonl_round_trip(frames in prop::collection::vec(arb_gaze(), 0..20)) {
            let back = parse_gaze_jsonl(&gaze_to_jsonl(&frames)).unwrap();
            prop_assert_eq!(back, frames);
        }

        #[test]
        fn flow_round_trip_bit_exact(w in 2usize..7, h in 2usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut planes = || (0..w * h).map(|_| rng.gen_range(-50.0f32..50.0) as f64).collect::<Vec<_>>();
            let frames = vec![FlowField::from_planes(w, h, planes(), planes()).unwrap(); 2];
            let back = decode_flow(&encode_flow(&frames), "mem").unwrap();
            prop_assert_eq!(back, frames);
        }

        #[test]
        fn pgm_quantization_bound(vals in prop::collection::vec(0.0f64..=1.0, 12)) {
            let m = Heatmap::from_vec(4, 3, vals).unwrap();
            let back = decode_pgm(&encode_pgm(&m).unwrap(), "mem").unwrap();
            for (a, b) in m.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 131070.0 + 1e-15);
            }
        }
    }
}
