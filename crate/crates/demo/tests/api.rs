use samp_demo::{align_json, attention_json, episode_json, ToyEpisode};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn align_returns_convex_weights() {
    let supports = [0.0, 0.0, 1.0, 1.0];
    let queries = [0.1, 0.0, 0.9, 1.0, 0.5, 0.5];
    let v = parse(align_json(&supports, &queries, 0.1).unwrap());
    let weights = v["weights"].as_array().unwrap();
    assert_eq!(weights.len(), 2);
    for row in weights {
        let row: Vec<f64> = row.as_array().unwrap().iter().map(|w| w.as_f64().unwrap()).collect();
        assert_eq!(row.len(), 3);
        assert!(row.iter().all(|&w| w >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert_eq!(v["projected"].as_array().unwrap().len(), 2);
    assert!(v["converged"].as_bool().unwrap());
}

#[test]
fn align_rejects_odd_input() {
    assert!(align_json(&[0.0, 1.0, 2.0], &[0.0, 0.0], 0.1).is_err());
    assert!(align_json(&[0.0, 1.0], &[0.0, 0.0], 0.0).is_err());
}

#[test]
fn attention_rows_are_distributions_over_neighbors() {
    let pts = [0.0, 0.0, 0.1, 0.2, 1.0, -1.0, -0.5, 0.7, 0.3, 0.3];
    let v = parse(attention_json(&pts, 0.0, 2, 1, 3).unwrap());
    let neighbors: Vec<u64> = v["neighbors"].as_array().unwrap().iter().map(|n| n.as_u64().unwrap()).collect();
    assert!(neighbors.contains(&1));
    for head in v["weights"].as_array().unwrap() {
        let w: Vec<f64> = head.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert_eq!(w.len(), 5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (j, &x) in w.iter().enumerate() {
            if !neighbors.contains(&(j as u64)) {
                assert_eq!(x, 0.0);
            }
        }
    }
    assert!(attention_json(&pts, 0.0, 2, 9, 3).is_err());
    assert!(attention_json(&pts, 0.0, 3, 0, 3).is_err());
}

#[test]
fn toy_episode_is_deterministic() {
    let t = ToyEpisode { ways: 4, shots: 2, queries: 6, spread: 0.1, shift: 0.0, ot: true, seed: 1 };
    let a = episode_json(&t).unwrap();
    assert_eq!(a, episode_json(&t).unwrap());
    let v = parse(a);
    assert_eq!(v["supports"].as_array().unwrap().len(), 8);
    assert_eq!(v["queries"].as_array().unwrap().len(), 24);
    assert!(v["accuracy"].as_f64().unwrap() > 0.9);
}

#[test]
fn toy_episode_shift_hurts_without_transport() {
    let base = ToyEpisode { ways: 4, shots: 1, queries: 15, spread: 0.08, shift: 0.5, ot: false, seed: 0 };
    let (mut on, mut off) = (0.0, 0.0);
    for seed in 0..20 {
        let acc = |ot| parse(episode_json(&ToyEpisode { ot, seed, ..base }).unwrap())["accuracy"].as_f64().unwrap();
        on += acc(true);
        off += acc(false);
    }
    assert!(on > off, "on {on} off {off}");
}
