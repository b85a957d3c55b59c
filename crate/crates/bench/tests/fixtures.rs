use fairforecast_bench::{fixture, Size};

#[test]
fn fixtures_match_their_size() {
    for size in [Size::SMALL, Size::DEFAULT] {
        let (trainer, batch) = fixture(size);
        assert_eq!(batch.inputs.shape(), &[size.batch, size.window, size.n_vars]);
        assert_eq!(batch.targets.shape(), &[size.batch, size.horizon, size.n_vars]);
        let out = trainer.model.predict(&batch.inputs).unwrap();
        assert_eq!(out.shape(), &[size.batch, size.horizon, size.n_vars]);
    }
}
