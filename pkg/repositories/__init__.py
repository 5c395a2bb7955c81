# repositories package: instance configs and result CSVs on local disk
