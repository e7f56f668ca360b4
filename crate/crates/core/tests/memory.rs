//! Long-run allocation stability: the autodiff tape is rebuilt every step,
//! so a step late in training must allocate the same as an early one. Any
//! structure that silently accumulates graph nodes shows up here as growth
//! in per-step allocation traffic or in live bytes.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};

use peerstyle_core::data::SyntheticDataset;
use peerstyle_core::nn::{Models, NetConfig};
use peerstyle_core::rng::RngStreams;
use peerstyle_core::train::{train_step, Optimizers, TrainConfig};

static ALLOC_CALLS: AtomicU64 = AtomicU64::new(0);
static LIVE_BYTES: AtomicI64 = AtomicI64::new(0);

struct CountingAllocator;

unsafe impl GlobalAlloc for CountingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        ALLOC_CALLS.fetch_add(1, Ordering::Relaxed);
        LIVE_BYTES.fetch_add(layout.size() as i64, Ordering::Relaxed);
        unsafe { System.alloc(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        LIVE_BYTES.fetch_sub(layout.size() as i64, Ordering::Relaxed);
        unsafe { System.dealloc(ptr, layout) }
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        ALLOC_CALLS.fetch_add(1, Ordering::Relaxed);
        LIVE_BYTES.fetch_add(new_size as i64 - layout.size() as i64, Ordering::Relaxed);
        unsafe { System.realloc(ptr, layout, new_size) }
    }
}

#[global_allocator]
static ALLOCATOR: CountingAllocator = CountingAllocator;

fn within_five_percent(early: f64, late: f64) -> bool {
    (late - early).abs() <= 0.05 * early.abs().max(1.0)
}

#[test]
fn step_1000_allocates_like_step_10() {
    let mut cfg = TrainConfig::desk();
    cfg.net = NetConfig {
        image_channels: 3,
        base_width: 2,
        content_channels: 1,
        style_local_channels: 1,
        style_global_channels: 1,
        n_resnet_blocks: 0,
        k_neighbors: 1,
        attention_dropout: 0.2,
        discriminator_noise_sigma: 0.1,
    };
    cfg.crop_size = 4;
    cfg.batch_size = 1;
    cfg.seed = 71;
    let models = Models::init(&cfg.net, cfg.seed).unwrap();
    let mut streams = RngStreams::new(cfg.seed);
    let mut optimizers = Optimizers::new(&models, cfg.learning_rate);
    let mut data = SyntheticDataset::desk_default();
    data.image_size = 4;

    let mut measured: Vec<(u64, i64)> = Vec::new();
    for step in 0..=1000u64 {
        let batch = data.sample_batch(cfg.batch_size, &mut streams.data).unwrap();
        let calls_before = ALLOC_CALLS.load(Ordering::Relaxed);
        let live_before = LIVE_BYTES.load(Ordering::Relaxed);
        train_step(&models, &batch, &mut optimizers, &cfg, &mut streams, step).unwrap();
        if step == 10 || step == 1000 {
            let calls = ALLOC_CALLS.load(Ordering::Relaxed) - calls_before;
            let live = LIVE_BYTES.load(Ordering::Relaxed) - live_before;
            measured.push((calls, live));
        }
    }

    let (calls_early, residue_early) = measured[0];
    let (calls_late, residue_late) = measured[1];
    assert!(
        within_five_percent(calls_early as f64, calls_late as f64),
        "allocation traffic grew: step 10 made {calls_early} allocations, step 1000 made {calls_late}"
    );
    // A step must not retain memory: everything the tape allocated is freed
    // once the report is produced (the optimizer state was built up front).
    assert!(
        residue_early.abs() as f64 <= 1024.0,
        "step 10 retained {residue_early} bytes"
    );
    assert!(
        residue_late.abs() as f64 <= 1024.0,
        "step 1000 retained {residue_late} bytes"
    );
}
