# Provenance module