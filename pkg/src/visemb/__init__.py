"""visemb: joint image-caption embeddings with contrastive adversarial
captions.

Submodules:
  numerics   reverse-mode autodiff, Adam, checkpoints
  knowledge  lexical knowledge base (hypernyms, synsets, concreteness,
             frequency, preposition overlap sets, plural forms)
  lingua     tokenization, tagging, noun-phrase chunking, caption I/O
  adversary  rule-based adversarial caption generation
  vse        the joint embedding model, ranking losses, training loop
  metrics    R@K, rank statistics, AP/MAP
  tasks      attack evaluation, plural split, saliency, word-object
             retrieval, fill-in-the-blank
  synth      synthetic grounded corpus generator
  cli        command-line entry point
"""

__version__ = "0.1.0"
