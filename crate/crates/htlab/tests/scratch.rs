//! Temporary tuning probe; deleted before release.

use std::sync::Arc;
use std::time::Instant;

use htlab::charact::{build_pair_table, characterize, seed_pairs_from_simulation};
use htlab::designgen::Profile;
use htlab::logicsim::{identify_rare_nets, signal_probabilities, simulate, PatternSet};
use htlab::satcore::{CompatChecker, DEFAULT_CONFLICT_BUDGET};

#[test]
#[ignore]
fn probe_proxies() {
    for profile in [
        Profile::C6288Class,
        Profile::C7552Class,
        Profile::S13207Class,
        Profile::S15850Class,
    ] {
        let t0 = Instant::now();
        let netlist = Arc::new(profile.generate());
        let probs = signal_probabilities(&netlist, 100_000, 7);
        let rares = identify_rare_nets(&netlist, &probs, 0.1);
        println!(
            "{}: {} gates, {} inputs, {} rares ({:?})",
            profile.name(),
            netlist.num_gates(),
            netlist.primary_inputs().len(),
            rares.len(),
            t0.elapsed()
        );
        let t1 = Instant::now();
        let checker = CompatChecker::new(Arc::clone(&netlist), DEFAULT_CONFLICT_BUDGET);
        let seed_patterns = PatternSet::random(netlist.primary_inputs().len(), 4096, 11);
        let sim = simulate(&netlist, &seed_patterns).unwrap();
        seed_pairs_from_simulation(&checker, &rares, &seed_patterns, &sim);
        let table = build_pair_table(&checker, &rares);
        let n = rares.len();
        let mut edges = 0usize;
        let mut solo = 0usize;
        for i in 0..n {
            if table.entry(i, i) {
                solo += 1;
            }
            for j in i + 1..n {
                if table.entry(i, j) {
                    edges += 1;
                }
            }
        }
        let stats = checker.stats();
        println!(
            "  pair table: {} solo-sat, {}/{} edges ({:.1}%), sat_calls {}, unknowns {}, seeded {}, {:?}",
            solo,
            edges,
            n * (n - 1) / 2,
            100.0 * edges as f64 / (n * (n - 1) / 2).max(1) as f64,
            stats.sat_calls,
            stats.unknowns,
            stats.seeded,
            t1.elapsed()
        );
        let t2 = Instant::now();
        let data = characterize(&checker, &rares, table, 10_000, 5, false);
        println!(
            "  characterize T=10000: avg set size {:.1}, {:?}",
            data.average_set_size(),
            t2.elapsed()
        );
        // How hard is it to find an uncovered compatible 4-set by random search?
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut evading = 0usize;
        let mut compatible = 0usize;
        let trials = 2000;
        for _ in 0..trials {
            let mut pick: Vec<usize> = Vec::new();
            while pick.len() < 4 {
                let c = rng.random_range(0..n);
                if !pick.contains(&c) {
                    pick.push(c);
                }
            }
            pick.sort_unstable();
            let pairwise_ok = (0..4).all(|i| {
                table_entry_all(&data, &pick, i)
            });
            if !pairwise_ok {
                continue;
            }
            let query = htlab::satcore::CompatQuery::new(rares.literals(&pick)).unwrap();
            if checker.check(&query) == htlab::satcore::CompatVerdict::Compatible {
                compatible += 1;
                if !data.covered(&pick) {
                    evading += 1;
                }
            }
        }
        println!(
            "  random 4-sets: {}/{} pairwise+SAT compatible, {} evading ({:?})",
            compatible,
            trials,
            evading,
            t2.elapsed()
        );
    }
}

fn table_entry_all(data: &htlab::charact::CharacterizationData, pick: &[usize], i: usize) -> bool {
    let table = data.pair_table();
    pick.iter().all(|&j| j == pick[i] || table.entry(pick[i], j))
}

/// Trimmed random walk mirroring the RL environment's action masking.
#[test]
#[ignore]
fn probe_trimmed_walks() {
    use rand::{Rng, SeedableRng};
    for profile in [
        Profile::C6288Class,
        Profile::C7552Class,
        Profile::S13207Class,
        Profile::S15850Class,
    ] {
        let netlist = Arc::new(profile.generate());
        let probs = signal_probabilities(&netlist, 100_000, 7);
        let rares = identify_rare_nets(&netlist, &probs, 0.1);
        let checker = CompatChecker::new(Arc::clone(&netlist), DEFAULT_CONFLICT_BUDGET);
        let seed_patterns = PatternSet::random(netlist.primary_inputs().len(), 4096, 11);
        let sim = simulate(&netlist, &seed_patterns).unwrap();
        seed_pairs_from_simulation(&checker, &rares, &seed_patterns, &sim);
        let table = build_pair_table(&checker, &rares);
        let data = characterize(&checker, &rares, table, 10_000, 5, false);
        let n = rares.len();
        let table = data.pair_table();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut uncovered = 0usize;
        let mut sat_uncovered = 0usize;
        let trials = 3000;
        let mut finished = 0usize;
        for _ in 0..trials {
            // uniform trimmed walk, width 4
            let mut s: Vec<usize> = Vec::new();
            for _step in 0..4 {
                let legal: Vec<usize> = (0..n)
                    .filter(|&c| {
                        !s.contains(&c)
                            && table.entry(c, c)
                            && s.iter().all(|&m| table.entry(m, c))
                    })
                    .collect();
                if legal.is_empty() {
                    break;
                }
                s.push(legal[rng.random_range(0..legal.len())]);
            }
            if s.len() < 4 {
                continue;
            }
            finished += 1;
            s.sort_unstable();
            if !data.covered(&s) {
                uncovered += 1;
                let query = htlab::satcore::CompatQuery::new(rares.literals(&s)).unwrap();
                if checker.check(&query) == htlab::satcore::CompatVerdict::Compatible {
                    sat_uncovered += 1;
                }
            }
        }
        println!(
            "{}: {}/{} walks finished, {} uncovered, {} also SAT",
            profile.name(),
            finished,
            trials,
            uncovered,
            sat_uncovered
        );
        // Low-likelihood-start walks (pruning-style bias).
        let branches = data.select_branches(5);
        println!(
            "  lowest-likelihood branches: {:?} (L = {:?})",
            &branches,
            branches
                .iter()
                .map(|&b| data.likelihood()[b])
                .collect::<Vec<_>>()
        );
        let mut uncovered_b = 0usize;
        let mut sat_b = 0usize;
        let mut finished_b = 0usize;
        for t in 0..trials {
            let start = branches[t % branches.len()];
            if !table.entry(start, start) {
                continue;
            }
            let mut s: Vec<usize> = vec![start];
            for _step in 0..3 {
                let legal: Vec<usize> = (0..n)
                    .filter(|&c| {
                        !s.contains(&c)
                            && table.entry(c, c)
                            && s.iter().all(|&m| table.entry(m, c))
                    })
                    .collect();
                if legal.is_empty() {
                    break;
                }
                s.push(legal[rng.random_range(0..legal.len())]);
            }
            if s.len() < 4 {
                continue;
            }
            finished_b += 1;
            s.sort_unstable();
            if !data.covered(&s) {
                uncovered_b += 1;
                let query = htlab::satcore::CompatQuery::new(rares.literals(&s)).unwrap();
                if checker.check(&query) == htlab::satcore::CompatVerdict::Compatible {
                    sat_b += 1;
                }
            }
        }
        println!(
            "  pruned-start walks: {}/{} finished, {} uncovered, {} also SAT",
            finished_b, trials, uncovered_b, sat_b
        );
    }
}

/// Decoder-bank needle statistics plus a mask-guided preference-policy bound.
#[test]
#[ignore]
fn probe_banked() {
    use htlab::satcore::{CompatQuery, CompatVerdict};
    use rand::{Rng, SeedableRng};
    for profile in [
        Profile::C7552Class,
        Profile::S13207Class,
        Profile::S15850Class,
    ] {
        let netlist = Arc::new(profile.generate());
        let probs = signal_probabilities(&netlist, 100_000, 7);
        let rares = identify_rare_nets(&netlist, &probs, 0.1);
        let checker = CompatChecker::new(Arc::clone(&netlist), DEFAULT_CONFLICT_BUDGET);
        let seed_patterns = PatternSet::random(netlist.primary_inputs().len(), 4096, 11);
        let sim = simulate(&netlist, &seed_patterns).unwrap();
        seed_pairs_from_simulation(&checker, &rares, &seed_patterns, &sim);
        let table = build_pair_table(&checker, &rares);
        let n = rares.len();
        let dead = (0..n).filter(|&i| !table.entry(i, i)).count();
        // detector rare indices grouped by bank
        let mut banks: Vec<Vec<usize>> = vec![Vec::new(); 3];
        for i in 0..n {
            let name = netlist.net_name(rares.get(i).net).to_string();
            if let Some(rest) = name.strip_prefix("bank") {
                if let Some((k, d)) = rest.split_once("_d") {
                    if !d.contains('_') {
                        banks[k.parse::<usize>().unwrap()].push(i);
                    }
                }
            }
        }
        let det_total: usize = banks.iter().map(|b| b.len()).sum();
        println!(
            "{}: {} gates, {} rares, {} dead, {} detector rares {:?}",
            profile.name(),
            netlist.num_gates(),
            n,
            dead,
            det_total,
            banks.iter().map(|b| b.len()).collect::<Vec<_>>()
        );
        let data = characterize(&checker, &rares, table, 10_000, 5, false);
        println!("  avg set size {:.1}", data.average_set_size());

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        // universal triple rate: random cross-bank detector triples never seen
        // jointly in any characterization set
        let mut tried = 0usize;
        let mut universal: Vec<Vec<usize>> = Vec::new();
        for _ in 0..600 {
            let mut bs: Vec<usize> = Vec::new();
            while bs.len() < 3 {
                let b = rng.random_range(0..3);
                if !bs.contains(&b) && !banks[b].is_empty() {
                    bs.push(b);
                }
            }
            let mut triple: Vec<usize> = bs
                .iter()
                .map(|&b| banks[b][rng.random_range(0..banks[b].len())])
                .collect();
            triple.sort_unstable();
            let pairwise = triple[1..].iter().all(|&j| data.pair_table().entry(triple[0], j))
                && data.pair_table().entry(triple[1], triple[2]);
            if !pairwise {
                continue;
            }
            tried += 1;
            if !data.covered(&triple) {
                let q = CompatQuery::new(rares.literals(&triple)).unwrap();
                if checker.check(&q) == CompatVerdict::Compatible {
                    universal.push(triple);
                }
            }
        }
        println!(
            "  universal triples: {}/{} sampled cross-bank triples",
            universal.len(),
            tried
        );
        if universal.is_empty() {
            continue;
        }
        // mixed quads (2 typicals + 2 cross-bank detectors): coverage
        let typicals: Vec<usize> = (0..n)
            .filter(|&i| !banks.iter().any(|b| b.contains(&i)))
            .collect();
        let mut quad_tried = 0usize;
        let mut quad_uncov = 0usize;
        for _ in 0..400 {
            let mut bs: Vec<usize> = Vec::new();
            while bs.len() < 2 {
                let b = rng.random_range(0..3);
                if !bs.contains(&b) && !banks[b].is_empty() {
                    bs.push(b);
                }
            }
            let mut quad: Vec<usize> = bs
                .iter()
                .map(|&b| banks[b][rng.random_range(0..banks[b].len())])
                .collect();
            while quad.len() < 4 {
                let t = typicals[rng.random_range(0..typicals.len())];
                if !quad.contains(&t) && data.pair_table().entry(t, t) {
                    quad.push(t);
                }
            }
            quad.sort_unstable();
            let pairwise = (0..4).all(|i| {
                quad.iter().all(|&j| j == quad[i] || data.pair_table().entry(quad[i], j))
            });
            if !pairwise {
                continue;
            }
            quad_tried += 1;
            if !data.covered(&quad) {
                quad_uncov += 1;
            }
        }
        println!("  2-det+2-typ quads: {}/{} uncovered", quad_uncov, quad_tried);

        // preference-policy success over every rare start: fixed universal
        // triple as the preferred completion, alternates from same banks,
        // then any compatible detector, then any compatible net
        let pref = universal[0].clone();
        let mut success = 0usize;
        let mut fail_mask = 0usize;
        let mut fail_cov = 0usize;
        let mut fail_sat = 0usize;
        for start in 0..n {
            if !data.pair_table().entry(start, start) {
                continue;
            }
            let mut path = vec![start];
            for _ in 0..3 {
                let allowed = |c: usize, path: &Vec<usize>| {
                    !path.contains(&c)
                        && data.pair_table().entry(c, c)
                        && path.iter().all(|&m| data.pair_table().entry(m, c))
                };
                let mut next: Option<usize> = None;
                for &p in &pref {
                    if allowed(p, &path) {
                        next = Some(p);
                        break;
                    }
                }
                if next.is_none() {
                    // fall back to any detector, preferring banks not in path
                    'outer: for bank in &banks {
                        for &d in bank {
                            if allowed(d, &path) {
                                next = Some(d);
                                break 'outer;
                            }
                        }
                    }
                }
                if next.is_none() {
                    for c in 0..n {
                        if allowed(c, &path) {
                            next = Some(c);
                            break;
                        }
                    }
                }
                match next {
                    Some(c) => path.push(c),
                    None => break,
                }
            }
            if path.len() < 4 {
                fail_mask += 1;
                continue;
            }
            path.sort_unstable();
            if data.covered(&path) {
                fail_cov += 1;
                continue;
            }
            let q = CompatQuery::new(rares.literals(&path)).unwrap();
            if checker.check(&q) == CompatVerdict::Compatible {
                success += 1;
            } else {
                fail_sat += 1;
            }
        }
        println!(
            "  preference policy: {}/{} starts succeed ({} mask-stall, {} covered, {} sat-fail)",
            success, n, fail_mask, fail_cov, fail_sat
        );

        // transfer: do uncovered quads stay uncovered under a fresh
        // characterization seed?
        let table2 = build_pair_table(&checker, &rares);
        let data2 = characterize(&checker, &rares, table2, 10_000, 6, false);
        let mut still = 0usize;
        let mut total = 0usize;
        for quad in universal.iter().take(50) {
            total += 1;
            if !data2.covered(quad) {
                still += 1;
            }
        }
        println!("  transfer: {}/{} universal triples stay uncovered under fresh seed", still, total);
    }
}

/// Fresh-run evasion comparison: preference-policy quads (RL stand-in) vs
/// trimmed-walk accepts (minus-RL stand-in).
#[test]
#[ignore]
fn probe_corpus_transfer() {
    use htlab::satcore::{CompatQuery, CompatVerdict};
    use rand::{Rng, SeedableRng};
    for profile in [Profile::C7552Class, Profile::S13207Class, Profile::S15850Class] {
        let netlist = Arc::new(profile.generate());
        let probs = signal_probabilities(&netlist, 100_000, 7);
        let rares = identify_rare_nets(&netlist, &probs, 0.1);
        let checker = CompatChecker::new(Arc::clone(&netlist), DEFAULT_CONFLICT_BUDGET);
        let seed_patterns = PatternSet::random(netlist.primary_inputs().len(), 4096, 11);
        let sim = simulate(&netlist, &seed_patterns).unwrap();
        seed_pairs_from_simulation(&checker, &rares, &seed_patterns, &sim);
        let table = build_pair_table(&checker, &rares);
        let n = rares.len();
        let data = characterize(&checker, &rares, table, 10_000, 5, false);
        let fresh_table = build_pair_table(&checker, &rares);
        let fresh = characterize(&checker, &rares, fresh_table, 10_000, 1234, false);

        let mut banks: Vec<Vec<usize>> = vec![Vec::new(); 3];
        for i in 0..n {
            let name = netlist.net_name(rares.get(i).net).to_string();
            if let Some(rest) = name.strip_prefix("bank") {
                if let Some((k, d)) = rest.split_once("_d") {
                    if !d.contains('_') {
                        banks[k.parse::<usize>().unwrap()].push(i);
                    }
                }
            }
        }
        let is_det: Vec<bool> = (0..n)
            .map(|i| banks.iter().any(|b| b.contains(&i)))
            .collect();

        // minus-RL stand-in: uniform trimmed walks, accept uncovered+SAT
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut accepts: Vec<Vec<usize>> = Vec::new();
        let mut draws = 0usize;
        while accepts.len() < 120 && draws < 60_000 {
            draws += 1;
            let mut s: Vec<usize> = Vec::new();
            for _ in 0..4 {
                let legal: Vec<usize> = (0..n)
                    .filter(|&c| {
                        !s.contains(&c)
                            && data.pair_table().entry(c, c)
                            && s.iter().all(|&m| data.pair_table().entry(m, c))
                    })
                    .collect();
                if legal.is_empty() {
                    break;
                }
                s.push(legal[rng.random_range(0..legal.len())]);
            }
            if s.len() < 4 {
                continue;
            }
            s.sort_unstable();
            if data.covered(&s) {
                continue;
            }
            let q = CompatQuery::new(rares.literals(&s)).unwrap();
            if checker.check(&q) == CompatVerdict::Compatible {
                accepts.push(s);
            }
        }
        let minus_det_counts: Vec<usize> = accepts
            .iter()
            .map(|s| s.iter().filter(|&&i| is_det[i]).count())
            .collect();
        let minus_fresh_evade = accepts.iter().filter(|s| !fresh.covered(s)).count();
        println!(
            "{}: minus-RL stand-in: {} accepts in {} draws; fresh-evade {}/{}; det-count hist {:?}",
            profile.name(),
            accepts.len(),
            draws,
            minus_fresh_evade,
            accepts.len(),
            (0..5)
                .map(|k| minus_det_counts.iter().filter(|&&c| c == k).count())
                .collect::<Vec<_>>()
        );

        // RL stand-in: preference-policy quads from every start (reuse the
        // first universal triple found)
        let mut universal: Option<Vec<usize>> = None;
        'search: for _ in 0..600 {
            let mut bs: Vec<usize> = Vec::new();
            while bs.len() < 3 {
                let b = rng.random_range(0..3);
                if !bs.contains(&b) {
                    bs.push(b);
                }
            }
            let mut triple: Vec<usize> = bs
                .iter()
                .map(|&b| banks[b][rng.random_range(0..banks[b].len())])
                .collect();
            triple.sort_unstable();
            let pairwise = triple[1..].iter().all(|&j| data.pair_table().entry(triple[0], j))
                && data.pair_table().entry(triple[1], triple[2]);
            if pairwise && !data.covered(&triple) {
                let q = CompatQuery::new(rares.literals(&triple)).unwrap();
                if checker.check(&q) == CompatVerdict::Compatible {
                    universal = Some(triple);
                    break 'search;
                }
            }
        }
        let pref = universal.expect("universal triple exists");
        let mut rl_quads: Vec<Vec<usize>> = Vec::new();
        for start in 0..n {
            if !data.pair_table().entry(start, start) {
                continue;
            }
            let mut path = vec![start];
            for _ in 0..3 {
                let allowed = |c: usize, path: &Vec<usize>| {
                    !path.contains(&c)
                        && data.pair_table().entry(c, c)
                        && path.iter().all(|&m| data.pair_table().entry(m, c))
                };
                let mut next: Option<usize> = None;
                for &p in &pref {
                    if allowed(p, &path) {
                        next = Some(p);
                        break;
                    }
                }
                if next.is_none() {
                    'outer: for bank in &banks {
                        for &d in bank {
                            if allowed(d, &path) {
                                next = Some(d);
                                break 'outer;
                            }
                        }
                    }
                }
                match next {
                    Some(c) => path.push(c),
                    None => break,
                }
            }
            if path.len() < 4 {
                continue;
            }
            path.sort_unstable();
            if data.covered(&path) {
                continue;
            }
            let q = CompatQuery::new(rares.literals(&path)).unwrap();
            if checker.check(&q) == CompatVerdict::Compatible {
                rl_quads.push(path);
            }
        }
        let rl_fresh_evade = rl_quads.iter().filter(|s| !fresh.covered(s)).count();
        println!(
            "  RL stand-in: {} quads; fresh-evade {}/{} ({:.1}% vs minus {:.1}%)",
            rl_quads.len(),
            rl_fresh_evade,
            rl_quads.len(),
            100.0 * rl_fresh_evade as f64 / rl_quads.len().max(1) as f64,
            100.0 * minus_fresh_evade as f64 / accepts.len().max(1) as f64
        );
    }
}

/// End-to-end training probe on the s13207-class proxy.
#[test]
#[ignore]
fn probe_training() {
    use htlab::rlagent::{extract_triggers, train, RewardParams, TrainConfig};
    let t0 = std::time::Instant::now();
    let netlist = Arc::new(Profile::S13207Class.generate());
    let probs = signal_probabilities(&netlist, 100_000, 7);
    let rares = identify_rare_nets(&netlist, &probs, 0.1);
    let checker = CompatChecker::new(Arc::clone(&netlist), DEFAULT_CONFLICT_BUDGET);
    let seed_patterns = PatternSet::random(netlist.primary_inputs().len(), 4096, 11);
    let sim = simulate(&netlist, &seed_patterns).unwrap();
    seed_pairs_from_simulation(&checker, &rares, &seed_patterns, &sim);
    let table = build_pair_table(&checker, &rares);
    let data = characterize(&checker, &rares, table, 10_000, 5, false);
    println!("setup: {:.1}s, {} rares", t0.elapsed().as_secs_f64(), rares.len());

    let t1 = std::time::Instant::now();
    let config = TrainConfig::default();
    let reward = RewardParams::default();
    let (_, log) = train(&checker, &rares, &data, &config, &reward, 1).unwrap();
    let train_secs = t1.elapsed().as_secs_f64();
    let last = log.records.last().unwrap();
    let first_good = log
        .records
        .iter()
        .find(|r| r.mean >= 0.9 * reward.rho2 && r.sigma < 0.1 * reward.rho2);
    println!(
        "train: {:.1}s, {} episodes, {} timesteps; final mean {:.1} sigma {:.1}",
        train_secs,
        log.records.len(),
        log.timesteps,
        last.mean,
        last.sigma
    );
    match first_good {
        Some(r) => println!(
            "  criterion threshold first met at timestep {} (episode {})",
            r.timestep, r.episode
        ),
        None => println!("  criterion threshold NEVER met"),
    }
    println!(
        "  sat_fail_after_pairwise {}, unknown {}",
        log.sat_fail_after_pairwise, log.unknown_full_set
    );
    let tail: Vec<f64> = log.records.iter().rev().take(200).map(|r| r.reward).collect();
    let evading_tail = tail.iter().filter(|&&r| r == 500.0).count();
    println!("  last 200 episodes: {} at rho2", evading_tail);

    let ex = extract_triggers(&log, &netlist, &checker, &rares, 100);
    println!("  extracted {} candidates (shortfall {})", ex.candidates.len(), ex.shortfall());
    let fresh_table = build_pair_table(&checker, &rares);
    let fresh = characterize(&checker, &rares, fresh_table, 10_000, 1234, false);
    let mut evade = 0;
    let mut det_hist = [0usize; 5];
    for c in &ex.candidates {
        let idx = c.rare_indices(&rares).unwrap();
        if !fresh.covered(&idx) {
            evade += 1;
        }
        let dets = c
            .literals
            .iter()
            .filter(|&&(net, _)| netlist.net_name(net).starts_with("bank"))
            .count();
        det_hist[dets.min(4)] += 1;
    }
    println!(
        "  fresh-char evasion {}/{}; det-count hist {:?}",
        evade,
        ex.candidates.len(),
        det_hist
    );
}

#[test]
#[ignore]
fn probe_acceptance_heavy() {
    use htlab::detectors::{DetectorConfig, Technique, run_detector};
    use htlab::evalharness::{activation_flags, activation_rate, side_channel_sensitivity, median};
    use htlab::rlagent::{extract_triggers, train, RewardParams, TrainConfig};
    use htlab::trojan::{
        insert_trojan, minus_rl_triggers, random_trigger, Provenance, StopRule, TriggerCandidate,
        TrojanDescriptor, TriggerLiteral,
    };
    use htlab::netlist::Netlist;
    use std::time::Duration;

    fn descriptor_of(netlist: &Netlist, c: &TriggerCandidate) -> TrojanDescriptor {
        TrojanDescriptor {
            trigger: c
                .literals
                .iter()
                .map(|&(n, v)| TriggerLiteral {
                    net: netlist.net_name(n).to_string(),
                    rare_value: u8::from(v),
                })
                .collect(),
            payload_target: String::new(),
            seed: 0,
            provenance: Provenance::Rl,
        }
    }

    for profile in [
        Profile::C6288Class,
        Profile::C7552Class,
        Profile::S13207Class,
        Profile::S15850Class,
    ] {
        let whole = Instant::now();
        let netlist = Arc::new(profile.generate());
        let probs = signal_probabilities(&netlist, 100_000, 7);
        let rares = identify_rare_nets(&netlist, &probs, 0.1);
        let checker = CompatChecker::new(netlist.clone(), DEFAULT_CONFLICT_BUDGET);
        let patterns = PatternSet::random(netlist.primary_inputs().len(), 4096, 11);
        let sim = simulate(&netlist, &patterns).unwrap();
        seed_pairs_from_simulation(&checker, &rares, &patterns, &sim);
        let table = build_pair_table(&checker, &rares);
        let data = characterize(&checker, &rares, table, 10_000, 5, false);
        let setup_s = whole.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let (_policy, log) = train(
            &checker,
            &rares,
            &data,
            &TrainConfig::default(),
            &RewardParams::default(),
            1,
        )
        .unwrap();
        let train_s = t0.elapsed().as_secs_f64();
        let last = log.records.last().unwrap();

        let rl = extract_triggers(&log, &netlist, &checker, &rares, 100).candidates;
        let mut random = Vec::new();
        for i in 0..100u64 {
            random.push(
                random_trigger(&rares, &checker, 4, 0x5eed ^ i.wrapping_mul(0x9e37), 200_000)
                    .unwrap()
                    .0,
            );
        }
        let minus = minus_rl_triggers(
            &data,
            &rares,
            &checker,
            4,
            2,
            StopRule::Duration(Duration::from_secs_f64(train_s)),
        )
        .unwrap_or_default();
        let minus: Vec<TriggerCandidate> = minus.into_iter().take(100).collect();

        let t1 = Instant::now();
        let tarmac = run_detector(
            &checker,
            &rares,
            Some(data.pair_table()),
            &DetectorConfig {
                technique: Technique::Tarmac,
                pattern_budget: 10_000,
                k: 10,
                population: 100,
                generations: 200,
                q: 2,
                reorder_weight: 1.0,
                seed: 9,
            },
        )
        .unwrap();
        let tarmac_s = t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        let maxsense = run_detector(
            &checker,
            &rares,
            None,
            &DetectorConfig {
                technique: Technique::MaxSense,
                pattern_budget: 10_000,
                k: 10,
                population: 100,
                generations: 200,
                q: 2,
                reorder_weight: 1.0,
                seed: 10,
            },
        )
        .unwrap();
        let maxsense_s = t2.elapsed().as_secs_f64();

        let success = |corpus: &[TriggerCandidate]| -> f64 {
            if corpus.is_empty() {
                return 0.0;
            }
            let descs: Vec<TrojanDescriptor> =
                corpus.iter().map(|c| descriptor_of(&netlist, c)).collect();
            let flags = activation_flags(&netlist, &descs, &tarmac.patterns).unwrap();
            100.0 - activation_rate(&flags)
        };
        let s_rl = success(&rl);
        let s_rand = success(&random);
        let s_minus = success(&minus);

        let t3 = Instant::now();
        let sens = |corpus: &[TriggerCandidate], salt: u64| -> (f64, f64) {
            if corpus.is_empty() {
                return (f64::NAN, f64::NAN);
            }
            let values: Vec<f64> = corpus
                .iter()
                .enumerate()
                .filter_map(|(i, c)| {
                    let inst =
                        insert_trojan(&netlist, c, None, salt ^ (i as u64), Provenance::Rl).ok()?;
                    side_channel_sensitivity(&netlist, &inst.netlist, &maxsense.patterns)
                        .ok()
                        .map(|s| s.max_percent)
                })
                .collect();
            let frac = values.iter().filter(|&&v| v < 10.0).count() as f64 / values.len() as f64;
            (median(&values), frac)
        };
        let (med_rl, frac_rl) = sens(&rl, 0x1111);
        let (med_rand, frac_rand) = sens(&random, 0x2222);
        let sens_s = t3.elapsed().as_secs_f64();

        println!(
            "{}: rares {} setup {:.1}s train {:.1}s (mean {:.1} sigma {:.1}) tarmac {} pats {:.1}s maxsense {} pats {:.1}s sens {:.1}s total {:.1}s",
            profile.name(),
            rares.len(),
            setup_s,
            train_s,
            last.mean,
            last.sigma,
            tarmac.patterns.len(),
            tarmac_s,
            maxsense.patterns.len(),
            maxsense_s,
            sens_s,
            whole.elapsed().as_secs_f64()
        );
        println!(
            "  corpora: rl {} random {} minus {} | success rl {:.1} random {:.1} minus {:.1}",
            rl.len(),
            random.len(),
            minus.len(),
            s_rl,
            s_rand,
            s_minus
        );
        println!(
            "  maxsense: median rl {:.2} random {:.2} | frac<10 rl {:.2} random {:.2}",
            med_rl, med_rand, frac_rl, frac_rand
        );
    }
}

#[test]
#[ignore]
fn probe_miss_anatomy() {
    use htlab::detectors::{DetectorConfig, Technique, run_detector};
    use htlab::rlagent::{extract_triggers, train, RewardParams, TrainConfig};
    use htlab::trojan::{minus_rl_triggers, random_trigger, StopRule, TriggerCandidate};
    use std::time::Duration;

    for profile in [Profile::C7552Class, Profile::S15850Class] {
        let netlist = Arc::new(profile.generate());
        let probs = signal_probabilities(&netlist, 100_000, 7);
        let rares = identify_rare_nets(&netlist, &probs, 0.1);
        let checker = CompatChecker::new(netlist.clone(), DEFAULT_CONFLICT_BUDGET);
        let patterns = PatternSet::random(netlist.primary_inputs().len(), 4096, 11);
        let sim = simulate(&netlist, &patterns).unwrap();
        seed_pairs_from_simulation(&checker, &rares, &patterns, &sim);
        let table = build_pair_table(&checker, &rares);
        let data = characterize(&checker, &rares, table, 10_000, 5, false);

        let tarmac = run_detector(
            &checker,
            &rares,
            Some(data.pair_table()),
            &DetectorConfig {
                pattern_budget: 10_000,
                ..DetectorConfig::new(Technique::Tarmac, 9)
            },
        )
        .unwrap();
        let tsim = simulate(&netlist, &tarmac.patterns).unwrap();
        let npat = tarmac.patterns.len();

        // Per-rare co-activation frequency inside the TARMAC pattern set.
        let freq: Vec<f64> = rares
            .iter()
            .map(|r| {
                let row = tsim.at_value_row(r.net, r.rare_value);
                let ones: u32 = row.iter().map(|w| w.count_ones()).sum();
                ones as f64 / npat as f64
            })
            .collect();
        let is_det: Vec<bool> = rares
            .iter()
            .map(|r| netlist.net_name(r.net).starts_with("bank"))
            .collect();
        let mut plain: Vec<f64> = freq
            .iter()
            .zip(&is_det)
            .filter(|&(_, &d)| !d)
            .map(|(&f, _)| f)
            .collect();
        plain.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let det: Vec<f64> = freq
            .iter()
            .zip(&is_det)
            .filter(|&(_, &d)| d)
            .map(|(&f, _)| f)
            .collect();
        let q = |v: &[f64], p: f64| v[((v.len() - 1) as f64 * p) as usize];
        println!(
            "{}: rares {} (det {}) plain freq q10 {:.3} q50 {:.3} q90 {:.3} min {:.4} | det freq mean {:.4}",
            profile.name(),
            rares.len(),
            det.len(),
            q(&plain, 0.1),
            q(&plain, 0.5),
            q(&plain, 0.9),
            plain.first().unwrap(),
            det.iter().sum::<f64>() / det.len().max(1) as f64,
        );

        // Caught = some TARMAC pattern sets every literal to its rare value.
        let caught = |c: &TriggerCandidate| -> bool {
            let mut acc = vec![u64::MAX; npat.div_ceil(64)];
            for &(net, val) in &c.literals {
                let row = tsim.at_value_row(net, val);
                for (a, w) in acc.iter_mut().zip(row) {
                    *a &= w;
                }
            }
            let tail = npat % 64;
            if tail != 0 {
                *acc.last_mut().unwrap() &= (1u64 << tail) - 1;
            }
            acc.iter().any(|&w| w != 0)
        };
        let det_count = |c: &TriggerCandidate| -> usize {
            c.literals
                .iter()
                .filter(|&&(n, _)| netlist.net_name(n).starts_with("bank"))
                .count()
        };

        let mut random = Vec::new();
        for i in 0..100u64 {
            random.push(
                random_trigger(&rares, &checker, 4, 0x5eed ^ i.wrapping_mul(0x9e37), 200_000)
                    .unwrap()
                    .0,
            );
        }
        let t0 = Instant::now();
        let (_p, log) = train(
            &checker,
            &rares,
            &data,
            &TrainConfig::default(),
            &RewardParams::default(),
            1,
        )
        .unwrap();
        let train_s = t0.elapsed().as_secs_f64();
        let rl = extract_triggers(&log, &netlist, &checker, &rares, 100).candidates;
        let minus: Vec<TriggerCandidate> = minus_rl_triggers(
            &data,
            &rares,
            &checker,
            4,
            2,
            StopRule::Duration(Duration::from_secs_f64(train_s)),
        )
        .unwrap_or_default()
        .into_iter()
        .take(100)
        .collect();

        for (name, corpus) in [("random", &random), ("rl", &rl), ("minus", &minus)] {
            let mut by_class = [(0usize, 0usize); 5];
            for c in corpus {
                let k = det_count(c);
                by_class[k].0 += 1;
                if !caught(c) {
                    by_class[k].1 += 1;
                }
            }
            let parts: Vec<String> = by_class
                .iter()
                .enumerate()
                .filter(|(_, (n, _))| *n > 0)
                .map(|(k, (n, m))| format!("{}det {}/{} miss", k, m, n))
                .collect();
            println!("  {}: {}", name, parts.join(" | "));
        }
    }
}
