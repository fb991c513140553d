"""
DrugProt/ChemProt three-file corpus: records, parsers and the in-memory corpus
"""
