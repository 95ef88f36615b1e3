use satstereo_core::verification::{run_desk_experiment, DeskConfig};

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "/tmp/desk-run".into());
    let _ = std::fs::remove_dir_all(&dir);
    let r = run_desk_experiment(&DeskConfig::preset(), Some(std::path::Path::new(&dir))).unwrap();
    for e in &r.records {
        println!("epoch {} lr {:.1e} loss {:.3} ce {:?} epe {:?}", e.epoch, e.learning_rate, e.loss, e.ce, e.epe);
    }
    println!("steps {} test {:.3} d1 {:.2} mirrored {:.3} spearman {:.3} secs {:.0}", r.optimizer_steps, r.test_epe, r.test_d1, r.mirrored_epe, r.ce_epe_spearman, r.train_seconds);
    if let Some(v) = &r.violation {
        for e in &v.records {
            println!("  ft epoch {} loss {:.3} ce {:?} epe {:?}", e.epoch, e.loss, e.ce, e.epe);
        }
        println!("  stopped {:?} restored {:?} matches {}", v.stopped_at, v.restored_epoch, v.restored_matches_minimum);
    }
}
