"""Deep-interpretability GWAS toolkit.

Simulate structured genotype/trait data, train L1-regularized feedforward
predictors, attribute their predictions to SNPs with DeepLIFT (Rescale) and
compare against a per-SNP association scan.
"""

__version__ = "0.1.0"
