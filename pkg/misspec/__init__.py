# Misspecified-posterior numerics module
