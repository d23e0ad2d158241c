use lrocsim_demo::{bke_curves, phantom_frame, signal_frame};

#[test]
fn frames_have_rgba_layout() {
    for preset in ["bke_system1", "lb", "clb"] {
        let f = phantom_frame(preset, 3, 5, true).unwrap();
        assert_eq!(f.rgba().len(), f.width() * f.height() * 4);
        assert!(f.rgba().chunks(4).all(|p| p[3] == 255 && p[0] == p[1] && p[1] == p[2]));
    }
}

#[test]
fn signal_frame_peaks_at_its_location() {
    let f = signal_frame("lb", 1).unwrap();
    let rgba = f.rgba();
    let brightest = (0..f.width() * f.height()).max_by_key(|&i| rgba[4 * i]).unwrap();
    let (x, y) = (brightest % f.width(), brightest / f.width());
    assert!((x as i64 - 16).abs() <= 1 && (y as i64 - 16).abs() <= 1, "{x},{y}");
    assert!(signal_frame("lb", 0).is_err());
    assert!(signal_frame("lb", 10).is_err());
}

#[test]
fn phantoms_are_seeded() {
    let a = phantom_frame("lb", 1, 0, true).unwrap().rgba();
    let b = phantom_frame("lb", 1, 0, true).unwrap().rgba();
    let c = phantom_frame("lb", 2, 0, true).unwrap().rgba();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn bke_curves_are_consistent() {
    let c = bke_curves("bke_system1", 100, 4).unwrap();
    assert!(c.alroc() > 0.1 && c.alroc() <= c.auc() && c.auc() <= 1.0);
    assert_eq!(c.lroc_fpf().len(), c.lroc_pcl().len());
    assert_eq!(*c.lroc_fpf().last().unwrap(), 1.0);
    assert_eq!(*c.roc_tpf().last().unwrap(), 1.0);
    assert!(bke_curves("lb", 10, 4).is_err());
}
