use deal_copula::dataset::{
    bucket_report, generate_population, CooccurrenceMatrix, MarginalCounts, PairCountTable,
    PopulationTarget,
};
use deal_copula::fixtures;

#[test]
fn paper_population_reproduces_published_counts() {
    let start = std::time::Instant::now();
    let deals = generate_population(&PopulationTarget::paper(), 7).unwrap();
    eprintln!("generated {} deals in {:?}", deals.len(), start.elapsed());
    assert_eq!(deals.len() as u64, fixtures::TOTAL_DEALS);

    let cooc = CooccurrenceMatrix::from_deals(&deals);
    assert_eq!(cooc.marginals(), MarginalCounts::paper());
    assert_eq!(PairCountTable::from_deals(&deals), PairCountTable::paper());

    let rows = bucket_report(&deals);
    for (row, &(label, first, repeat)) in rows.iter().zip(fixtures::BUCKET_COUNTS.iter()) {
        assert_eq!(row.bucket.label(), label);
        assert_eq!((row.first.count, row.repeat.count), (first, repeat), "{label}");
    }
    for d in &deals {
        // One founder type and one geography per deal.
        assert!(d.attributes().ones().count() >= 2);
        let p = d.p.value();
        assert!((0.05..=0.20).contains(&p));
    }
    let ids: Vec<u64> = deals.iter().map(|d| d.id.0).collect();
    assert_eq!(ids, (1..=fixtures::TOTAL_DEALS).collect::<Vec<_>>());
}
