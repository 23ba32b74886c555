use std::ffi::{c_char, CStr, CString};
use std::ptr;

use chartsmith_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe { chs_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn image(w: u32, h: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> *mut ChsImage {
    let mut px = Vec::new();
    for y in 0..h {
        for x in 0..w {
            px.extend(f(x, y));
        }
    }
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { chs_image_from_rgb(w, h, px.as_ptr(), px.len(), &mut out) },
        ChsStatus::Ok
    );
    out
}

#[test]
fn version_is_cargo_version() {
    let v = unsafe { CStr::from_ptr(chs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn image_scores_and_histogram() {
    let red = image(20, 20, |_, _| [255, 0, 0]);
    let split = image(20, 20, |x, _| if x < 10 { [255, 0, 0] } else { [0, 0, 255] });
    unsafe {
        assert_eq!((chs_image_width(red), chs_image_height(red)), (20, 20));
        let mut s = 0.0;
        assert_eq!(chs_color_score(red, red, &mut s), ChsStatus::Ok);
        assert_eq!(s, 1.0);
        assert_eq!(chs_color_score(split, red, &mut s), ChsStatus::Ok);
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert_eq!(chs_structure_score(split, split, &mut s), ChsStatus::Ok);
        assert_eq!(s, 1.0);
        let mut counts = [0u64; CHS_HSV_BINS];
        assert_eq!(chs_hsv_histogram(split, counts.as_mut_ptr()), ChsStatus::Ok);
        assert_eq!(counts.iter().sum::<u64>(), 400);
        assert_eq!(counts[0], 200);
        chs_image_free(red);
        chs_image_free(split);
        chs_image_free(ptr::null_mut());
    }
}

#[test]
fn decode_errors_set_message() {
    let junk = [1u8, 2, 3];
    let mut out = ptr::null_mut();
    let st = unsafe { chs_image_decode(junk.as_ptr(), junk.len(), &mut out) };
    assert_eq!(st, ChsStatus::DecodeError);
    assert!(out.is_null());
    assert!(last_error().contains("does not decode"));

    let st = unsafe { chs_image_decode(ptr::null(), 0, &mut out) };
    assert_eq!(st, ChsStatus::NullArgument);
    assert!(last_error().contains("null"));

    let px = [0u8; 5];
    let st = unsafe { chs_image_from_rgb(2, 2, px.as_ptr(), px.len(), &mut out) };
    assert_eq!(st, ChsStatus::InvalidArgument);
}

#[test]
fn decode_png_round_trip() {
    let img = image::RgbImage::from_pixel(7, 5, image::Rgb([10, 20, 30]));
    let mut png = Vec::new();
    image::DynamicImage::ImageRgb8(img)
        .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
        .unwrap();
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(chs_image_decode(png.as_ptr(), png.len(), &mut out), ChsStatus::Ok);
        assert_eq!(chs_image_width(out), 7);
        chs_image_free(out);
    }
}

#[test]
fn jaccard_and_verify() {
    let a = CString::new("a b\nc").unwrap();
    let b = CString::new("b c d").unwrap();
    let mut j = 0.0;
    unsafe {
        assert_eq!(chs_text_jaccard(a.as_ptr(), b.as_ptr(), &mut j), ChsStatus::Ok);
        assert!((j - 0.5).abs() < 1e-12);
        assert_eq!(
            chs_text_jaccard(ptr::null(), b.as_ptr(), &mut j),
            ChsStatus::NullArgument
        );

        let (mut passed, mut theta) = (false, 0.0);
        assert_eq!(
            chs_verify(
                0.9,
                0.9,
                0.9,
                ChsStopMode::Average,
                0.9,
                0.0,
                0,
                &mut passed,
                &mut theta
            ),
            ChsStatus::Ok
        );
        assert!(passed);
        assert_eq!(
            chs_verify(
                1.0,
                1.0,
                0.6,
                ChsStopMode::AllPass,
                0.7,
                0.0,
                0,
                &mut passed,
                &mut theta
            ),
            ChsStatus::Ok
        );
        assert!(!passed);
        assert_eq!(
            chs_verify(
                0.8,
                0.8,
                0.8,
                ChsStopMode::Average,
                0.9,
                0.05,
                2,
                &mut passed,
                &mut theta
            ),
            ChsStatus::Ok
        );
        assert!(passed);
        assert!((theta - 0.8).abs() < 1e-12);
        assert_eq!(
            chs_verify(
                0.8,
                0.8,
                0.8,
                ChsStopMode::Average,
                1.5,
                0.0,
                0,
                &mut passed,
                &mut theta
            ),
            ChsStatus::InvalidArgument
        );
    }
}

#[test]
fn traces_and_facet_f1() {
    let gold = CString::new(
        r##"{"texts":["A","B","C"],"chart_types":["bar"],"colors":["#FF0000","#ff0000"],"layout":[[1,1,1]]}"##,
    )
    .unwrap();
    let gen = CString::new(r##"{"texts":["A","B","D"],"chart_types":["bar"],"colors":["#f00"],"layout":[[1,1,1]]}"##)
        .unwrap();
    let (mut g, mut p) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(chs_trace_parse(gold.as_ptr(), &mut g), ChsStatus::Ok);
        assert_eq!(chs_trace_parse(gen.as_ptr(), &mut p), ChsStatus::Ok);
        let mut f = ChsFacetF1::default();
        assert_eq!(chs_facet_f1(g, p, ChsFacet::Text, &mut f), ChsStatus::Ok);
        assert!((f.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(chs_facet_f1(g, p, ChsFacet::Color, &mut f), ChsStatus::Ok);
        assert_eq!((f.matched, f.precision, f.recall), (1, 1.0, 0.5));
        assert_eq!(chs_facet_f1(g, g, ChsFacet::Layout, &mut f), ChsStatus::Ok);
        assert_eq!(f.f1, 1.0);
        chs_trace_free(g);
        chs_trace_free(p);

        let bad = CString::new(r#"{"texts":[],"chart_types":[],"colors":[],"layout":[[1,1,2]]}"#).unwrap();
        let mut t = ptr::null_mut();
        assert_eq!(chs_trace_parse(bad.as_ptr(), &mut t), ChsStatus::ParseError);
        assert!(last_error().contains("layout"));
    }
}
