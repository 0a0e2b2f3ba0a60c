//! Upload decoding. PGM goes through the pipeline's own decoder; PNG and
//! JPEG are decoded here and converted to 8-bit luma.

use hogface::{decode_pgm, GrayImage};

pub fn decode_upload(bytes: &[u8]) -> Result<GrayImage, String> {
    if bytes.is_empty() {
        return Err("photo is empty".into());
    }
    let img = if bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
        decode_pgm(bytes).map_err(|e| format!("invalid PGM: {e}"))?
    } else {
        let decoded = image::load_from_memory(bytes)
            .map_err(|e| format!("unsupported or corrupt image: {e}"))?;
        let luma = decoded.to_luma8();
        let (w, h) = luma.dimensions();
        let data = luma.into_raw().into_iter().map(f64::from).collect();
        GrayImage::new(h as usize, w as usize, data).map_err(|e| e.to_string())?
    };
    img.ensure_pipeline_ready().map_err(|e| e.to_string())?;
    Ok(img)
}
