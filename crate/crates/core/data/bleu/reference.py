# Recomputes expected.txt with sacrebleu (no tokenization, no smoothing),
# which agrees with multi-bleu.perl on pre-tokenized text.
import sacrebleu

hyp = open("hyp.txt").read().splitlines()
ref = open("ref.txt").read().splitlines()
score = sacrebleu.corpus_bleu(hyp, [ref], tokenize="none", smooth_method="none", force=True).score
print(f"{score:.4f}")
