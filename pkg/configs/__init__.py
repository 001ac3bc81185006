# Configs module
