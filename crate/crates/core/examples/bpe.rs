//! Learns a byte-pair vocabulary from a few model definitions and encodes a line.

use dlport::embed::bpe_train;

fn main() {
    let texts = [
        include_str!("../fixtures/corpus/torch/models/mlp.py"),
        include_str!("../fixtures/corpus/torch/models/cnn.py"),
        include_str!("../fixtures/corpus/keras/dense.py"),
    ];
    let vocab = bpe_train(texts, 200);
    println!("{} tokens, {} merges", vocab.len(), vocab.merges().len());
    let line = "self.fc = nn.Linear(in_features=512, out_features=10)";
    let ids = vocab.encode(line);
    let pieces: Vec<&str> = ids.iter().filter_map(|&i| vocab.token(i)).collect();
    println!("{pieces:?}");
    assert_eq!(vocab.decode(&ids), line);
}
